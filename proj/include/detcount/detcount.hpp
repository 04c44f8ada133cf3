// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "detcount/config.hpp"
#include "detcount/dataset_io.hpp"
#include "detcount/geometry.hpp"
#include "detcount/grpo.hpp"
#include "detcount/mask_io.hpp"
#include "detcount/matching.hpp"
#include "detcount/metrics.hpp"
#include "detcount/response.hpp"
#include "detcount/reward.hpp"
#include "detcount/service.hpp"
#include "detcount/toy.hpp"
