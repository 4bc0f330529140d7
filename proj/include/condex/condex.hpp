#pragma once

#include "condex/core.hpp"
#include "condex/deform.hpp"
#include "condex/depmodel.hpp"
#include "condex/diagnostics.hpp"
#include "condex/distributions.hpp"
#include "condex/io.hpp"
#include "condex/likelihood.hpp"
#include "condex/margins.hpp"
#include "condex/optim.hpp"
#include "condex/simulate.hpp"
#include "condex/special.hpp"
