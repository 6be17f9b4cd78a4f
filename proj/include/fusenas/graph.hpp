#pragma once

#include <cstdint>
#include <string>

#include "fusenas/layers.hpp"

namespace fusenas {

// Compiled network: a body chain producing the penultimate embedding,
// followed by one linear output layer. Single-writer: do not call
// forward/backward concurrently on the same instance.
class ComputeGraph {
 public:
  Chain body;
  std::unique_ptr<Dense> head;  // final linear layer
  std::vector<std::size_t> input_shape;
  std::size_t penultimate_width = 0;
  std::size_t output_units = 0;

  // Forward to logits. Caches intermediates for backward.
  Tensor forward(const Tensor& x, bool training, DetRng& rng);
  // Forward through the body only (evaluation mode, no caching guarantees
  // beyond what backward needs; dropout disabled).
  Tensor embed(const Tensor& x);
  // Propagates d(loss)/d(logits); accumulates into parameter grad slots.
  Tensor backward(const Tensor& logit_grad);

  std::vector<Param*> params();
  void zero_grads();
  std::size_t param_count();
  void init_params(DetRng& rng);

  // FNV-1a over the little-endian f64 encoding of all parameter values.
  std::uint64_t checksum();

  void save_checkpoint(const std::string& path, const std::string& descriptor_hash,
                       std::uint64_t seed);
  // Returns the stored descriptor hash; shapes must match this graph.
  std::string load_checkpoint(const std::string& path);

 private:
  bool forward_called_ = false;
};

}  // namespace fusenas
