#pragma once

#include "tacntn/numcore.hpp"
#include "tacntn/corpus.hpp"
#include "tacntn/topicmodel.hpp"
#include "tacntn/model.hpp"
#include "tacntn/scoring.hpp"
#include "tacntn/eval.hpp"
#include "tacntn/training.hpp"
#include "tacntn/pipeline.hpp"
