#pragma once

#include "smre/checkpoint.hpp"
#include "smre/config.hpp"
#include "smre/corpus.hpp"
#include "smre/decoder.hpp"
#include "smre/encoder.hpp"
#include "smre/errors.hpp"
#include "smre/gradcheck.hpp"
#include "smre/instrumentation.hpp"
#include "smre/losses.hpp"
#include "smre/metrics.hpp"
#include "smre/model.hpp"
#include "smre/ops.hpp"
#include "smre/optim.hpp"
#include "smre/params.hpp"
#include "smre/support_set.hpp"
#include "smre/tensor.hpp"
#include "smre/training.hpp"
#include "smre/vocabulary.hpp"
