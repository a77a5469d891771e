#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "partscope/core_types.hpp"
#include "partscope/nn_ops.hpp"
#include "partscope/rng.hpp"
#include "partscope/tensor.hpp"

namespace partscope {

struct SegmenterSpec {
  int k_parts = 4;
  std::string architecture = "toy-unet";
  double output_fraction = 1.0;  // toy-unet emits masks at input resolution
};

struct ConvParams {
  Tensor w;
  Tensor b;
};

// Desk-scale reference segmenter: a 3-level encoder-decoder with widths
// (16, 32, 64), average-pool downsampling, nearest upsampling, concatenated
// skips, tanh activations, and a zero-initialized 1x1 head so that training
// starts from the exactly uniform mask.
class ToyUnet {
 public:
  static constexpr const char* kArchitecture = "toy-unet-v1:16,32,64";

  explicit ToyUnet(int k_parts);

  int num_parts() const { return k_parts_; }

  // fan-in scaled uniform init; head weights and all biases zero
  void init_parameters(Rng& rng);

  struct Cache {
    Tensor input;
    Tensor a1, p1, a2, p2, a3, u2, c2, d2, u1, c1, d1;
    Tensor logits, probs;
    std::size_t h = 0, w = 0;
  };

  // image: (3, h, w) tensor with h, w >= 4. Returns the pixel-wise softmax
  // over parts; fills `cache` when given (required for backward).
  SoftMask forward(const Tensor& image, Cache* cache = nullptr) const;

  struct Grads {
    ConvParams enc1, enc2, enc3, dec2, dec1, head;
  };
  Grads zero_grads() const;

  // Accumulates parameter gradients for d(loss)/d(probs); d_logits may be
  // supplied instead (pass probs-gradient null). Gradients w.r.t. the input
  // image are not needed and not computed.
  void backward(const Cache& cache, const Tensor* d_probs, const Tensor* d_logits,
                Grads& grads) const;

  // Ordered traversal over named parameter tensors, shared by the optimizer,
  // checkpoints and gradient tests.
  void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each_param(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  static void for_each_grad(Grads& grads, const std::function<void(const std::string&, Tensor&)>& fn);

  void save_checkpoint(const std::filesystem::path& path) const;
  // expected_k > 0 enforces the part count; mismatches raise an IoError
  // naming both values.
  static ToyUnet load_checkpoint(const std::filesystem::path& path, int expected_k = -1);

 private:
  int k_parts_;
  ConvParams enc1_, enc2_, enc3_, dec2_, dec1_, head_;
};

}  // namespace partscope
