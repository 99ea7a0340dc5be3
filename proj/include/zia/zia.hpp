#pragma once

// Zero-input intent prediction toolkit: synthetic multi-modal signal
// simulation, preprocessing, contrastive fusion, transformer-based
// variational intent inference, PPO adaptation, edge cost modeling and
// information-theoretic diagnostics.

#include "zia/common.hpp"
#include "zia/rng.hpp"
#include "zia/tensor.hpp"
#include "zia/autodiff.hpp"
#include "zia/signals.hpp"
#include "zia/preprocess.hpp"
#include "zia/infomet.hpp"
#include "zia/attention.hpp"
#include "zia/fusion.hpp"
#include "zia/predictor.hpp"
#include "zia/adapt.hpp"
#include "zia/edgecost.hpp"
#include "zia/pipeline.hpp"
#include "zia/report.hpp"
#include "zia/experiment.hpp"
#include "zia/runner.hpp"
