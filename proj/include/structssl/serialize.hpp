#pragma once

#include <string>
#include <utility>
#include <vector>

#include "structssl/tensor.hpp"

namespace structssl {

// Weight file layout, all integers 64-bit little-endian:
//   "SSLW" | version byte (1) | array count |
//   per array: name length | UTF-8 name | rank | dims... | raw f64 LE values
using NamedArrays = std::vector<std::pair<std::string, Tensor>>;

inline constexpr char kWeightsMagic[4] = {'S', 'S', 'L', 'W'};
inline constexpr unsigned char kWeightsVersion = 1;

void save_weights(const std::string& path, const NamedArrays& arrays);
NamedArrays load_weights(const std::string& path);

std::string encode_weights(const NamedArrays& arrays);
NamedArrays decode_weights(const std::string& bytes);

}  // namespace structssl
