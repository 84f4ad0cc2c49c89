// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include "storm/opcount.hpp"

namespace storm {

namespace {
thread_local OpCounter* tl_active = nullptr;
} // namespace

OpCounter* active_op_counter() { return tl_active; }

CountScope::CountScope(OpCounter& counter) : previous_(tl_active) { tl_active = &counter; }

CountScope::~CountScope() { tl_active = previous_; }

} // namespace storm
