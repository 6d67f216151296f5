// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#include "conflux/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include <fmt/core.h>

#include "conflux/errors.hpp"

namespace conflux {

std::string_view dtype_name(Dtype dtype) {
    return dtype == Dtype::F16 ? "F16" : "F32";
}

Dtype parse_dtype(std::string_view name) {
    if (name == "F32") return Dtype::F32;
    if (name == "F16") return Dtype::F16;
    throw FormatError(fmt::format("unsupported dtype '{}'", name));
}

std::size_t dtype_size(Dtype dtype) {
    return dtype == Dtype::F16 ? 2 : 4;
}

// IEEE 754 binary16 conversion with round-to-nearest-even.
std::uint16_t float_to_half(float value) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
    const std::uint32_t sign = (bits >> 16) & 0x8000u;
    const std::uint32_t exp = (bits >> 23) & 0xffu;
    std::uint32_t mant = bits & 0x7fffffu;

    if (exp == 0xff) { // inf / nan
        return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0u));
    }
    const int e = static_cast<int>(exp) - 127 + 15;
    if (e >= 0x1f) {
        return static_cast<std::uint16_t>(sign | 0x7c00u);
    }
    if (e <= 0) {
        if (e < -10) return static_cast<std::uint16_t>(sign);
        mant |= 0x800000u;
        const int shift = 14 - e;
        std::uint32_t half_mant = mant >> shift;
        const std::uint32_t rem = mant & ((1u << shift) - 1u);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1u))) ++half_mant;
        return static_cast<std::uint16_t>(sign | half_mant);
    }
    std::uint32_t half = sign | (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
    const std::uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half; // carry may bump exponent; that is correct
    return static_cast<std::uint16_t>(half);
}

float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = (static_cast<std::uint32_t>(h) & 0x8000u) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1fu;
    std::uint32_t mant = h & 0x3ffu;
    std::uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            int e = -1;
            do {
                ++e;
                mant <<= 1;
            } while ((mant & 0x400u) == 0);
            bits = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | ((mant & 0x3ffu) << 13);
        }
    } else if (exp == 0x1f) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

std::uint64_t element_count(const Shape& shape) {
    std::uint64_t n = 1;
    for (auto extent : shape) n *= extent;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, std::vector<float> data, Dtype dtype)
    : shape_(std::move(shape)), dtype_(dtype), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
        throw ValidationError(fmt::format("tensor shape {} does not match {} elements",
                                          shape_string(shape_), data_.size()));
    }
}

Tensor Tensor::zeros(Shape shape, Dtype dtype) {
    const auto n = element_count(shape);
    return Tensor(std::move(shape), std::vector<float>(n, 0.0f), dtype);
}

Tensor Tensor::vector(std::vector<float> data) {
    Shape shape{data.size()};
    return Tensor(std::move(shape), std::move(data));
}

bool Tensor::operator==(const Tensor& other) const {
    if (shape_ != other.shape_ || dtype_ != other.dtype_ || data_.size() != other.data_.size()) return false;
    return data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

bool Tensor::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor lincomb(const Tensor& a, const Tensor& b, float alpha, float beta) {
    if (a.shape() != b.shape()) {
        throw ValidationError(fmt::format("lincomb: shape mismatch {} vs {}",
                                          shape_string(a.shape()), shape_string(b.shape())));
    }
    std::vector<float> out(a.size());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = alpha * x[i] + beta * y[i];
    }
    return Tensor(a.shape(), std::move(out), a.dtype());
}

InnerProducts inner_products(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ValidationError(fmt::format("inner_products: shape mismatch {} vs {}",
                                          shape_string(a.shape()), shape_string(b.shape())));
    }
    double dot = 0.0, aa = 0.0, bb = 0.0;
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        const double yi = y[i];
        dot += xi * yi;
        aa += xi * xi;
        bb += yi * yi;
    }
    return {dot, std::sqrt(aa), std::sqrt(bb)};
}

} // namespace conflux
