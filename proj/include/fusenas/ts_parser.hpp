#pragma once

#include <string>
#include <vector>

#include "fusenas/tensor.hpp"

namespace fusenas {

// Equal-length multivariate series parsed from the supported .ts subset.
// Labels are contiguous indices in first-appearance order; label_names maps
// them back to the original strings.
struct RawSeries {
  std::string problem_name;
  std::size_t dimensions = 0;
  std::size_t series_length = 0;
  std::vector<Tensor> series;  // each [T, D]
  std::vector<int> labels;
  std::vector<std::string> label_names;
};

// Supported headers: @problemName, @dimensions, @univariate, @equalLength,
// @seriesLength, @classLabel, @data. Data lines use ':' between dimensions
// and ',' between values, with the class label last.
// Throws ValidationError with a line-numbered path on malformed input.
RawSeries parse_ts(const std::string& content);

// Canonical form of the supported subset; parse(serialize(r)) == r.
std::string serialize_ts(const RawSeries& r);

}  // namespace fusenas
