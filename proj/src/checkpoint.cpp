// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#include "conflux/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <unordered_set>

#include <fmt/core.h>
#include <json.hpp>

#include "conflux/errors.hpp"

namespace conflux {

using ojson = nlohmann::ordered_json;

void Checkpoint::add(std::string name, Tensor tensor) {
    if (name.empty()) throw ValidationError("checkpoint: empty tensor name");
    if (contains(name)) throw ValidationError(fmt::format("checkpoint: duplicate tensor name '{}'", name));
    entries_.emplace_back(std::move(name), std::move(tensor));
}

void Checkpoint::add_unchecked(std::string name, Tensor tensor) {
    entries_.emplace_back(std::move(name), std::move(tensor));
}

void Checkpoint::replace(const std::string& name, Tensor tensor) {
    for (auto& [n, t] : entries_) {
        if (n == name) {
            t = std::move(tensor);
            return;
        }
    }
    throw ValidationError(fmt::format("checkpoint: no tensor named '{}'", name));
}

bool Checkpoint::contains(const std::string& name) const {
    return find(name) != nullptr;
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : entries_) {
        if (n == name) return &t;
    }
    return nullptr;
}

const Tensor& Checkpoint::at(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw ValidationError(fmt::format("checkpoint: no tensor named '{}'", name));
}

void Checkpoint::validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& [name, tensor] : entries_) {
        if (name.empty()) throw ValidationError("checkpoint: empty tensor name");
        if (name == "__metadata__") throw ValidationError("checkpoint: '__metadata__' is reserved");
        if (!seen.insert(name).second) {
            throw ValidationError(fmt::format("checkpoint: duplicate tensor name '{}'", name));
        }
    }
}

std::string AlignmentReport::describe() const {
    std::string out;
    for (const auto& n : missing_in_a) out += fmt::format("missing-in-a: {}\n", n);
    for (const auto& n : missing_in_b) out += fmt::format("missing-in-b: {}\n", n);
    for (const auto& c : shape_conflicts) {
        out += fmt::format("shape-conflict: {} {} vs {}\n", c.name, shape_string(c.shape_a), shape_string(c.shape_b));
    }
    return out;
}

AlignmentReport validate_aligned(const Checkpoint& a, const Checkpoint& b) {
    AlignmentReport report;
    for (const auto& [name, ta] : a.entries()) {
        const Tensor* tb = b.find(name);
        if (!tb) {
            report.missing_in_b.push_back(name);
        } else if (ta.shape() != tb->shape()) {
            report.shape_conflicts.push_back({name, ta.shape(), tb->shape()});
        }
    }
    for (const auto& [name, tb] : b.entries()) {
        if (!a.contains(name)) report.missing_in_a.push_back(name);
    }
    return report;
}

void require_aligned(const Checkpoint& a, const Checkpoint& b, std::string_view context) {
    const auto report = validate_aligned(a, b);
    if (!report.aligned()) {
        throw ValidationError(fmt::format("{}: checkpoints are not aligned\n{}", context, report.describe()));
    }
}

namespace {

std::uint64_t read_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

void append_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void decode_payload(const unsigned char* src, std::size_t count, Dtype dtype, std::vector<float>& out) {
    out.resize(count);
    if (dtype == Dtype::F32) {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t bits = 0;
            for (int k = 3; k >= 0; --k) bits = (bits << 8) | src[4 * i + k];
            std::memcpy(&out[i], &bits, 4);
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            const auto h = static_cast<std::uint16_t>(src[2 * i] | (src[2 * i + 1] << 8));
            out[i] = half_to_float(h);
        }
    }
}

void encode_payload(const Tensor& t, std::string& out) {
    const auto data = t.data();
    if (t.dtype() == Dtype::F32) {
        for (float v : data) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
        }
    } else {
        for (float v : data) {
            const auto h = float_to_half(v);
            out.push_back(static_cast<char>(h & 0xff));
            out.push_back(static_cast<char>(h >> 8));
        }
    }
}

} // namespace

Checkpoint parse_checkpoint(std::string_view bytes) {
    if (bytes.size() < 8) throw FormatError("malformed header: file shorter than the 8-byte length prefix");
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint64_t header_len = read_u64_le(raw);
    if (header_len > bytes.size() - 8) throw FormatError("malformed header: header length exceeds file size");

    ojson header;
    try {
        header = ojson::parse(bytes.substr(8, header_len));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(fmt::format("malformed header: {}", e.what()));
    }
    if (!header.is_object()) throw FormatError("malformed header: top level is not an object");

    const std::uint64_t payload_size = bytes.size() - 8 - header_len;
    const unsigned char* payload = raw + 8 + header_len;

    Checkpoint ckpt;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    std::vector<std::string> range_names;

    for (const auto& [name, rec] : header.items()) {
        if (name == "__metadata__") {
            if (!rec.is_object()) throw FormatError("malformed header: __metadata__ is not an object");
            for (const auto& [k, v] : rec.items()) {
                if (!v.is_string()) throw FormatError(fmt::format("malformed header: metadata '{}' is not a string", k));
                ckpt.metadata()[k] = v.get<std::string>();
            }
            continue;
        }
        if (name.empty()) throw FormatError("malformed header: empty tensor name");
        if (!rec.is_object() || !rec.contains("dtype") || !rec.contains("shape") || !rec.contains("data_offsets")) {
            throw FormatError(fmt::format("malformed header: tensor '{}' lacks dtype/shape/data_offsets", name));
        }
        if (!rec["dtype"].is_string()) throw FormatError(fmt::format("malformed header: tensor '{}' dtype", name));
        Dtype dtype;
        try {
            dtype = parse_dtype(rec["dtype"].get<std::string>());
        } catch (const FormatError& e) {
            throw FormatError(fmt::format("tensor '{}': {}", name, e.what()));
        }
        Shape shape;
        if (!rec["shape"].is_array()) throw FormatError(fmt::format("malformed header: tensor '{}' shape", name));
        for (const auto& e : rec["shape"]) {
            if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<std::int64_t>() >= 0)) {
                throw FormatError(fmt::format("malformed header: tensor '{}' has a negative or non-integer extent", name));
            }
            shape.push_back(e.get<std::uint64_t>());
        }
        const auto& off = rec["data_offsets"];
        if (!off.is_array() || off.size() != 2 || !off[0].is_number_unsigned() || !off[1].is_number_unsigned()) {
            throw FormatError(fmt::format("malformed header: tensor '{}' data_offsets", name));
        }
        const auto begin = off[0].get<std::uint64_t>();
        const auto end = off[1].get<std::uint64_t>();
        if (end < begin) throw FormatError(fmt::format("tensor '{}': data_offsets end before begin", name));
        const std::uint64_t count = element_count(shape);
        if (end - begin != count * dtype_size(dtype)) {
            throw FormatError(fmt::format("tensor '{}': data range of {} bytes does not match shape {} ({})",
                                          name, end - begin, shape_string(shape), dtype_name(dtype)));
        }
        if (end > payload_size) throw FormatError(fmt::format("tensor '{}': truncated payload", name));
        if (ckpt.contains(name)) throw FormatError(fmt::format("malformed header: duplicate tensor '{}'", name));

        std::vector<float> data;
        decode_payload(payload + begin, count, dtype, data);
        ckpt.add(name, Tensor(std::move(shape), std::move(data), dtype));
        ranges.emplace_back(begin, end);
        range_names.push_back(name);
    }

    std::vector<std::size_t> order(ranges.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return ranges[x] < ranges[y]; });
    for (std::size_t i = 1; i < order.size(); ++i) {
        const auto& prev = ranges[order[i - 1]];
        const auto& cur = ranges[order[i]];
        if (cur.first < prev.second && cur.second > cur.first && prev.second > prev.first) {
            throw FormatError(fmt::format("tensor '{}': data range overlaps tensor '{}'",
                                          range_names[order[i]], range_names[order[i - 1]]));
        }
    }
    return ckpt;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open checkpoint '{}'", path.string()));
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes);
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    ckpt.validate();
    ojson header = ojson::object();
    if (!ckpt.metadata().empty()) {
        ojson meta = ojson::object();
        for (const auto& [k, v] : ckpt.metadata()) meta[k] = v;
        header["__metadata__"] = std::move(meta);
    }
    std::string payload;
    for (const auto& [name, tensor] : ckpt.entries()) {
        const std::uint64_t begin = payload.size();
        encode_payload(tensor, payload);
        ojson rec = ojson::object();
        rec["dtype"] = std::string(dtype_name(tensor.dtype()));
        rec["shape"] = tensor.shape();
        rec["data_offsets"] = {begin, static_cast<std::uint64_t>(payload.size())};
        header[name] = std::move(rec);
    }
    std::string text = header.dump();
    while (text.size() % 8 != 0) text.push_back(' ');

    std::string out;
    out.reserve(8 + text.size() + payload.size());
    append_u64_le(out, text.size());
    out += text;
    out += payload;
    return out;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

} // namespace conflux
