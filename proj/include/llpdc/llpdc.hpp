#pragma once

#include "llpdc/classifier.hpp"
#include "llpdc/data.hpp"
#include "llpdc/datagen.hpp"
#include "llpdc/llp_train.hpp"
#include "llpdc/mincost_flow.hpp"
#include "llpdc/proportion_assign.hpp"
