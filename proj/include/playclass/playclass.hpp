#pragma once

#include "playclass/chunk_planner.hpp"
#include "playclass/config.hpp"
#include "playclass/dataset_io.hpp"
#include "playclass/error.hpp"
#include "playclass/hungarian.hpp"
#include "playclass/loco_harness.hpp"
#include "playclass/mask.hpp"
#include "playclass/mask_features.hpp"
#include "playclass/numeric.hpp"
#include "playclass/play_classifier.hpp"
#include "playclass/rep_analysis.hpp"
#include "playclass/review.hpp"
#include "playclass/track_metrics.hpp"
