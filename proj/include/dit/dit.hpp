#pragma once

#include "dit/config.hpp"
#include "dit/dataset.hpp"
#include "dit/evaluate.hpp"
#include "dit/geometry.hpp"
#include "dit/gmcce.hpp"
#include "dit/grad_check.hpp"
#include "dit/io.hpp"
#include "dit/knn.hpp"
#include "dit/loss.hpp"
#include "dit/match.hpp"
#include "dit/metrics.hpp"
#include "dit/nn.hpp"
#include "dit/params.hpp"
#include "dit/pft.hpp"
#include "dit/pipeline.hpp"
#include "dit/pse.hpp"
#include "dit/sampling.hpp"
#include "dit/svd3.hpp"
#include "dit/tensor.hpp"
