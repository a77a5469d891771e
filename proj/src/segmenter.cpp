#include "partscope/segmenter.hpp"

#include <cmath>
#include <stdexcept>

#include "partscope/checkpoint_io.hpp"
#include "partscope/errors.hpp"

namespace partscope {

namespace {

constexpr std::size_t kW1 = 16, kW2 = 32, kW3 = 64;

ConvParams make_conv(std::size_t co, std::size_t ci, std::size_t ksize) {
  ConvParams p;
  p.w = ksize == 1 ? Tensor({co, ci}) : Tensor({co, ci, ksize, ksize});
  p.b = Tensor({co});
  return p;
}

void init_fan_in(Tensor& w, std::size_t fan_in, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
}

std::size_t half(std::size_t n) { return (n + 1) / 2; }

}  // namespace

ToyUnet::ToyUnet(int k_parts) : k_parts_(k_parts) {
  if (k_parts < 2) throw std::invalid_argument("segmenter needs K >= 2 parts");
  const auto k = static_cast<std::size_t>(k_parts);
  enc1_ = make_conv(kW1, 3, 3);
  enc2_ = make_conv(kW2, kW1, 3);
  enc3_ = make_conv(kW3, kW2, 3);
  dec2_ = make_conv(kW2, kW3 + kW2, 3);
  dec1_ = make_conv(kW1, kW2 + kW1, 3);
  head_ = make_conv(k, kW1, 1);
}

void ToyUnet::init_parameters(Rng& rng) {
  init_fan_in(enc1_.w, 3 * 9, rng);
  init_fan_in(enc2_.w, kW1 * 9, rng);
  init_fan_in(enc3_.w, kW2 * 9, rng);
  init_fan_in(dec2_.w, (kW3 + kW2) * 9, rng);
  init_fan_in(dec1_.w, (kW2 + kW1) * 9, rng);
  head_.w.fill(0.0);  // training starts from the uniform mask
  for (Tensor* b : {&enc1_.b, &enc2_.b, &enc3_.b, &dec2_.b, &dec1_.b, &head_.b}) b->fill(0.0);
}

SoftMask ToyUnet::forward(const Tensor& image, Cache* cache) const {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("segmenter input must be a (3, h, w) tensor");
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (h < 4 || w < 4) throw std::invalid_argument("segmenter input must be at least 4x4");

  Cache local;
  Cache& c = cache != nullptr ? *cache : local;
  c.h = h;
  c.w = w;
  if (cache != nullptr) c.input = image;

  nn::conv3x3_forward(image, enc1_.w, enc1_.b, 1, c.a1);
  nn::tanh_forward(c.a1);
  const auto pool1 = nn::make_area_pool(h, w, half(h), half(w));
  nn::area_pool_forward(pool1, c.a1, c.p1);

  nn::conv3x3_forward(c.p1, enc2_.w, enc2_.b, 1, c.a2);
  nn::tanh_forward(c.a2);
  const std::size_t h2 = c.a2.dim(1), w2 = c.a2.dim(2);
  const auto pool2 = nn::make_area_pool(h2, w2, half(h2), half(w2));
  nn::area_pool_forward(pool2, c.a2, c.p2);

  nn::conv3x3_forward(c.p2, enc3_.w, enc3_.b, 1, c.a3);
  nn::tanh_forward(c.a3);

  nn::upsample_nearest_forward(c.a3, h2, w2, c.u2);
  nn::concat_channels(c.u2, c.a2, c.c2);
  nn::conv3x3_forward(c.c2, dec2_.w, dec2_.b, 1, c.d2);
  nn::tanh_forward(c.d2);

  nn::upsample_nearest_forward(c.d2, h, w, c.u1);
  nn::concat_channels(c.u1, c.a1, c.c1);
  nn::conv3x3_forward(c.c1, dec1_.w, dec1_.b, 1, c.d1);
  nn::tanh_forward(c.d1);

  nn::conv1x1_forward(c.d1, head_.w, head_.b, c.logits);
  nn::softmax_channels(c.logits, c.probs);

  SoftMask mask;
  mask.data = c.probs;
  return mask;
}

ToyUnet::Grads ToyUnet::zero_grads() const {
  Grads g;
  g.enc1 = {Tensor(enc1_.w.shape()), Tensor(enc1_.b.shape())};
  g.enc2 = {Tensor(enc2_.w.shape()), Tensor(enc2_.b.shape())};
  g.enc3 = {Tensor(enc3_.w.shape()), Tensor(enc3_.b.shape())};
  g.dec2 = {Tensor(dec2_.w.shape()), Tensor(dec2_.b.shape())};
  g.dec1 = {Tensor(dec1_.w.shape()), Tensor(dec1_.b.shape())};
  g.head = {Tensor(head_.w.shape()), Tensor(head_.b.shape())};
  return g;
}

void ToyUnet::backward(const Cache& c, const Tensor* d_probs, const Tensor* d_logits,
                       Grads& g) const {
  Tensor dlogits(c.logits.shape());
  if (d_probs != nullptr) nn::softmax_channels_backward(c.probs, *d_probs, dlogits);
  if (d_logits != nullptr) axpy(dlogits, 1.0, *d_logits);

  Tensor dd1(c.d1.shape());
  nn::conv1x1_backward(c.d1, head_.w, dlogits, &dd1, &g.head.w, &g.head.b);

  Tensor dz1(c.d1.shape());
  nn::tanh_backward(c.d1, dd1, dz1);
  Tensor dc1(c.c1.shape());
  nn::conv3x3_backward(c.c1, dec1_.w, 1, dz1, &dc1, &g.dec1.w, &g.dec1.b);

  Tensor du1(c.u1.shape()), da1(c.a1.shape());
  nn::split_channels_backward(dc1, du1, da1);
  Tensor dd2(c.d2.shape());
  nn::upsample_nearest_backward(du1, c.d2.dim(1), c.d2.dim(2), dd2);

  Tensor dz2(c.d2.shape());
  nn::tanh_backward(c.d2, dd2, dz2);
  Tensor dc2(c.c2.shape());
  nn::conv3x3_backward(c.c2, dec2_.w, 1, dz2, &dc2, &g.dec2.w, &g.dec2.b);

  Tensor du2(c.u2.shape()), da2(c.a2.shape());
  nn::split_channels_backward(dc2, du2, da2);
  Tensor da3(c.a3.shape());
  nn::upsample_nearest_backward(du2, c.a3.dim(1), c.a3.dim(2), da3);

  Tensor dz3(c.a3.shape());
  nn::tanh_backward(c.a3, da3, dz3);
  Tensor dp2(c.p2.shape());
  nn::conv3x3_backward(c.p2, enc3_.w, 1, dz3, &dp2, &g.enc3.w, &g.enc3.b);

  const std::size_t h2 = c.a2.dim(1), w2 = c.a2.dim(2);
  const auto pool2 = nn::make_area_pool(h2, w2, half(h2), half(w2));
  nn::area_pool_backward(pool2, dp2, da2);

  Tensor dz2e(c.a2.shape());
  nn::tanh_backward(c.a2, da2, dz2e);
  Tensor dp1(c.p1.shape());
  nn::conv3x3_backward(c.p1, enc2_.w, 1, dz2e, &dp1, &g.enc2.w, &g.enc2.b);

  const auto pool1 = nn::make_area_pool(c.h, c.w, half(c.h), half(c.w));
  nn::area_pool_backward(pool1, dp1, da1);

  Tensor dz1e(c.a1.shape());
  nn::tanh_backward(c.a1, da1, dz1e);
  nn::conv3x3_backward(c.input, enc1_.w, 1, dz1e, nullptr, &g.enc1.w, &g.enc1.b);
}

void ToyUnet::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("enc1.w", enc1_.w);
  fn("enc1.b", enc1_.b);
  fn("enc2.w", enc2_.w);
  fn("enc2.b", enc2_.b);
  fn("enc3.w", enc3_.w);
  fn("enc3.b", enc3_.b);
  fn("dec2.w", dec2_.w);
  fn("dec2.b", dec2_.b);
  fn("dec1.w", dec1_.w);
  fn("dec1.b", dec1_.b);
  fn("head.w", head_.w);
  fn("head.b", head_.b);
}

void ToyUnet::for_each_param(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<ToyUnet*>(this)->for_each_param(
      [&](const std::string& name, Tensor& t) { fn(name, t); });
}

void ToyUnet::for_each_grad(Grads& g,
                            const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("enc1.w", g.enc1.w);
  fn("enc1.b", g.enc1.b);
  fn("enc2.w", g.enc2.w);
  fn("enc2.b", g.enc2.b);
  fn("enc3.w", g.enc3.w);
  fn("enc3.b", g.enc3.b);
  fn("dec2.w", g.dec2.w);
  fn("dec2.b", g.dec2.b);
  fn("dec1.w", g.dec1.w);
  fn("dec1.b", g.dec1.b);
  fn("head.w", g.head.w);
  fn("head.b", g.head.b);
}

void ToyUnet::save_checkpoint(const std::filesystem::path& path) const {
  CheckpointFile file;
  file.architecture = kArchitecture;
  file.k_parts = static_cast<std::uint32_t>(k_parts_);
  for_each_param([&](const std::string& name, const Tensor& t) {
    file.blocks.emplace_back(name, t);
  });
  save_checkpoint_file(path, file);
}

ToyUnet ToyUnet::load_checkpoint(const std::filesystem::path& path, int expected_k) {
  const CheckpointFile file = load_checkpoint_file(path);
  if (file.architecture != kArchitecture)
    throw IoError("checkpoint architecture mismatch: file has `" + file.architecture +
                  "`, expected `" + kArchitecture + "`");
  if (expected_k > 0 && static_cast<int>(file.k_parts) != expected_k)
    throw IoError("checkpoint K mismatch: file has K=" + std::to_string(file.k_parts) +
                  ", expected K=" + std::to_string(expected_k));
  ToyUnet model(static_cast<int>(file.k_parts));
  model.for_each_param([&](const std::string& name, Tensor& t) {
    const Tensor* src = file.find(name);
    if (src == nullptr) throw IoError("checkpoint missing parameter block `" + name + "`");
    if (!src->same_shape(t))
      throw IoError("checkpoint block `" + name + "` has unexpected shape");
    t = *src;
  });
  return model;
}

}  // namespace partscope
