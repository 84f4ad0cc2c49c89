// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "storm/driving.hpp"
#include "storm/teacher.hpp"
#include "storm/tensor.hpp"

#include <string>

namespace storm {

// Checkpoints are a manifest.json listing {name, file, block, shape} next to
// one STRMTNSR file per tensor. Block is the mixer/decoder block index
// parsed from the name, or -1 for unblocked parameters.

void save_checkpoint(const std::string& dir, driving::ModelParams& params);
//! Loads into an already-shaped ModelParams; throws on any name or shape
//! mismatch.
void load_checkpoint(const std::string& dir, driving::ModelParams& params);

void save_teacher_checkpoint(const std::string& dir, const teacher::Teacher& teacher);

} // namespace storm
