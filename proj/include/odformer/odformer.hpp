#pragma once

#include "odformer/checkpoint.hpp"
#include "odformer/config.hpp"
#include "odformer/decoder.hpp"
#include "odformer/encoder.hpp"
#include "odformer/error.hpp"
#include "odformer/gradcheck.hpp"
#include "odformer/loss.hpp"
#include "odformer/manifest.hpp"
#include "odformer/metrics.hpp"
#include "odformer/model.hpp"
#include "odformer/msca.hpp"
#include "odformer/netpbm.hpp"
#include "odformer/nn.hpp"
#include "odformer/ops.hpp"
#include "odformer/optim.hpp"
#include "odformer/params.hpp"
#include "odformer/sample.hpp"
#include "odformer/tensor.hpp"
#include "odformer/train.hpp"
