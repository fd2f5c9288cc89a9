#pragma once

#include "vtt/common.hpp"
#include "vtt/text.hpp"
#include "vtt/core.hpp"
#include "vtt/manifest_io.hpp"
#include "vtt/embedding_store.hpp"
#include "vtt/dataset_builder.hpp"
#include "vtt/synthetic.hpp"
#include "vtt/autograd.hpp"
#include "vtt/nn.hpp"
#include "vtt/state_encoding.hpp"
#include "vtt/context_encoder.hpp"
#include "vtt/text_decoder.hpp"
#include "vtt/model.hpp"
#include "vtt/trainer.hpp"
#include "vtt/metrics.hpp"
#include "vtt/diagnostics.hpp"
