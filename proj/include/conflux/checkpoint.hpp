// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "conflux/tensor.hpp"

namespace conflux {

using Metadata = std::map<std::string, std::string>;

/// Named tensors in insertion order plus string metadata. Insertion order is
/// the on-disk order.
class Checkpoint {
public:
    using Entry = std::pair<std::string, Tensor>;

    /// Appends a tensor; throws ValidationError on an empty or duplicate name.
    void add(std::string name, Tensor tensor);

    /// Appends without the uniqueness check. Only meant for building
    /// deliberately broken checkpoints; write_checkpoint re-validates.
    void add_unchecked(std::string name, Tensor tensor);

    /// Replaces an existing tensor, keeping its position.
    void replace(const std::string& name, Tensor tensor);

    bool contains(const std::string& name) const;
    const Tensor& at(const std::string& name) const; // throws ValidationError
    const Tensor* find(const std::string& name) const;

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    Metadata& metadata() { return metadata_; }
    const Metadata& metadata() const { return metadata_; }

    /// Throws ValidationError when names are empty or repeated.
    void validate() const;

    bool operator==(const Checkpoint& other) const = default;

private:
    std::vector<Entry> entries_;
    Metadata metadata_;
};

struct ShapeConflict {
    std::string name;
    Shape shape_a;
    Shape shape_b;
    bool operator==(const ShapeConflict&) const = default;
};

struct AlignmentReport {
    std::vector<std::string> missing_in_a;
    std::vector<std::string> missing_in_b;
    std::vector<ShapeConflict> shape_conflicts;

    bool aligned() const { return missing_in_a.empty() && missing_in_b.empty() && shape_conflicts.empty(); }
    std::string describe() const;
};

AlignmentReport validate_aligned(const Checkpoint& a, const Checkpoint& b);

/// Throws ValidationError carrying the report when a and b are not aligned.
void require_aligned(const Checkpoint& a, const Checkpoint& b, std::string_view context);

// Safetensors-compatible layout: u64 LE header length, JSON header, payload.
Checkpoint read_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(std::string_view bytes);
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);

} // namespace conflux
