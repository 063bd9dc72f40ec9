#pragma once

#include "edrnet/avedata.hpp"
#include "edrnet/b2ilc.hpp"
#include "edrnet/blob.hpp"
#include "edrnet/conv.hpp"
#include "edrnet/edrnet.hpp"
#include "edrnet/harness/ablation.hpp"
#include "edrnet/harness/checkpoint.hpp"
#include "edrnet/harness/config.hpp"
#include "edrnet/harness/export.hpp"
#include "edrnet/harness/train.hpp"
#include "edrnet/losses.hpp"
#include "edrnet/smbfuse.hpp"
#include "edrnet/tensor.hpp"
