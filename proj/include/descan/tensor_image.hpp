#pragma once

#include <vector>

#include "descan/image.hpp"
#include "descan/nn/tensor.hpp"

namespace descan {

// Image batch <-> [N, 3, H, W] tensor in latent coordinates x = 2 * pixel - 1.
template <class T>
nn::Tensor<T> to_latent(const std::vector<const Image*>& images) {
  require(!images.empty(), "to_latent: empty batch");
  const int h = images.front()->height(), w = images.front()->width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<T> v(images.size() * 3 * plane);
  for (std::size_t n = 0; n < images.size(); ++n) {
    require_same_size(*images.front(), *images[n], "to_latent");
    const auto px = images[n]->data();
    for (std::size_t i = 0; i < plane; ++i)
      for (int c = 0; c < 3; ++c) v[(n * 3 + c) * plane + i] = static_cast<T>(2.0 * px[i * 3 + c] - 1.0);
  }
  return nn::Tensor<T>({static_cast<int>(images.size()), 3, h, w}, std::move(v));
}

template <class T>
nn::Tensor<T> to_latent(const Image& image) {
  return to_latent<T>(std::vector<const Image*>{&image});
}

template <class T>
Image from_latent(std::span<const T> latent, int index, int h, int w) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Image out(h, w);
  auto px = out.data();
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      px[i * 3 + c] = 0.5 * (static_cast<double>(latent[(static_cast<std::size_t>(index) * 3 + c) * plane + i]) + 1.0);
  return out;
}

}  // namespace descan
