/**
 * @file dnnfm.hpp
 * @brief Umbrella header for the deep-network factor model library.
 */
#pragma once

#include "dnnfm/common.hpp"
#include "dnnfm/nn_core.hpp"
#include "dnnfm/trainer.hpp"
#include "dnnfm/metrics.hpp"
#include "dnnfm/factor_model.hpp"
#include "dnnfm/simulation.hpp"
#include "dnnfm/portfolio.hpp"
#include "dnnfm/io.hpp"
