#pragma once

#include "mixlid/batch.hpp"
#include "mixlid/corpus.hpp"
#include "mixlid/io_util.hpp"
#include "mixlid/layers.hpp"
#include "mixlid/metrics.hpp"
#include "mixlid/model.hpp"
#include "mixlid/tensor.hpp"
#include "mixlid/train.hpp"
#include "mixlid/unigram.hpp"
#include "mixlid/vocab.hpp"
