// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace conflux {

/// Storage dtype. Arithmetic always happens in 32-bit float; F16 only
/// changes how the tensor is written to disk.
enum class Dtype { F32, F16 };

std::string_view dtype_name(Dtype dtype);
Dtype parse_dtype(std::string_view name); // throws FormatError
std::size_t dtype_size(Dtype dtype);

std::uint16_t float_to_half(float value);
float half_to_float(std::uint16_t bits);

using Shape = std::vector<std::uint64_t>;

std::uint64_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<float> data, Dtype dtype = Dtype::F32);

    static Tensor zeros(Shape shape, Dtype dtype = Dtype::F32);
    static Tensor vector(std::vector<float> data);

    const Shape& shape() const { return shape_; }
    Dtype dtype() const { return dtype_; }
    std::size_t size() const { return data_.size(); }
    std::span<const float> data() const { return data_; }
    std::span<float> mutable_data() { return data_; }

    float operator[](std::size_t i) const { return data_[i]; }

    /// Same shape, dtype and bit-identical scalars.
    bool operator==(const Tensor& other) const;

    bool all_finite() const;

private:
    Shape shape_;
    Dtype dtype_ = Dtype::F32;
    std::vector<float> data_;
};

/// out[i] = alpha * a[i] + beta * b[i]. Throws ValidationError on shape mismatch.
Tensor lincomb(const Tensor& a, const Tensor& b, float alpha, float beta);

struct InnerProducts {
    double dot = 0.0;
    double norm_a = 0.0;
    double norm_b = 0.0;
};

/// Sequential-order reduction of dot(a, b), |a| and |b|.
InnerProducts inner_products(const Tensor& a, const Tensor& b);

} // namespace conflux
