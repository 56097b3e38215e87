#pragma once

#include "sadiff/bounds.hpp"
#include "sadiff/checkpoint.hpp"
#include "sadiff/common.hpp"
#include "sadiff/datasets.hpp"
#include "sadiff/experiment.hpp"
#include "sadiff/forward.hpp"
#include "sadiff/gap.hpp"
#include "sadiff/metrics.hpp"
#include "sadiff/oracle.hpp"
#include "sadiff/predictor.hpp"
#include "sadiff/report.hpp"
#include "sadiff/sampler.hpp"
#include "sadiff/schedule.hpp"
#include "sadiff/serialization.hpp"
#include "sadiff/training.hpp"
