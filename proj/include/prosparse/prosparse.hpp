#pragma once

#include "prosparse/error.hpp"
#include "prosparse/tensor.hpp"
#include "prosparse/treebank.hpp"
#include "prosparse/prosody.hpp"
#include "prosparse/parameters.hpp"
#include "prosparse/autodiff.hpp"
#include "prosparse/grad_check.hpp"
#include "prosparse/embeddings.hpp"
#include "prosparse/encoder.hpp"
#include "prosparse/chart.hpp"
#include "prosparse/features.hpp"
#include "prosparse/model.hpp"
#include "prosparse/evaluation.hpp"
#include "prosparse/corpus.hpp"
#include "prosparse/trainer.hpp"
#include "prosparse/config.hpp"
#include "prosparse/experiment.hpp"
#include "prosparse/synthetic.hpp"
