#pragma once

#include "aci/conformal.hpp"
#include "aci/core.hpp"
#include "aci/election.hpp"
#include "aci/error.hpp"
#include "aci/hmm.hpp"
#include "aci/io.hpp"
#include "aci/metrics.hpp"
#include "aci/quantile_regression.hpp"
#include "aci/random.hpp"
#include "aci/volatility.hpp"
