/* Copyright 2026 The lapmoe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lapmoe {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Standard normal CDF.
double normal_cdf(double u);

/// Exact GeLU, u * Phi(u).
double gelu(double u);
double gelu_derivative(double u);

double sigmoid(double u);

/// log(sum(exp(v))) with max subtraction. Sequential reduction in input order.
double log_sum_exp(std::span<const double> v);

/// Sum after sorting ascending. The result does not depend on input order,
/// so reductions built on it are bit-exact under permutation.
double canonical_sum(std::vector<double> v);

/// log-sum-exp whose reduction uses canonical_sum.
double canonical_log_sum_exp(std::vector<double> v);

/// Log density of N(mean, variance) at y.
double log_normal_pdf(double y, double mean, double variance);

/// splitmix64 finaliser.
std::uint64_t mix64(std::uint64_t x);

/// Derive an independent stream seed from a base seed and a list of tags.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);

}  // namespace lapmoe
