#pragma once

#include "fetalbet/augment.hpp"
#include "fetalbet/checkpoint.hpp"
#include "fetalbet/config.hpp"
#include "fetalbet/error.hpp"
#include "fetalbet/eval_report.hpp"
#include "fetalbet/image.hpp"
#include "fetalbet/infer.hpp"
#include "fetalbet/losses.hpp"
#include "fetalbet/manifest.hpp"
#include "fetalbet/metrics.hpp"
#include "fetalbet/models.hpp"
#include "fetalbet/preprocess.hpp"
#include "fetalbet/stats.hpp"
#include "fetalbet/train.hpp"
#include "fetalbet/volume_io.hpp"
