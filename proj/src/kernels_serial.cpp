#include "kernels_detail.hpp"

namespace repmlp::kernels::serial {

template <typename T>
void conv2d(const ConvGeometry& geo, std::span<const T> input, std::span<const T> kernel,
            std::span<const T> bias, std::span<T> output) {
  const T* b = bias.empty() ? nullptr : bias.data();
  for (int64_t n = 0; n < geo.batch; ++n)
    for (int64_t o = 0; o < geo.out_channels; ++o)
      detail::conv_plane(geo, input.data(), kernel.data(), b, output.data(), n, o);
}

template <typename T>
void grouped_fc(const FcGeometry& geo, std::span<const T> input, std::span<const T> kernel,
                std::span<const T> bias, std::span<T> output) {
  const T* b = bias.empty() ? nullptr : bias.data();
  for (int64_t n = 0; n < geo.batch; ++n)
    for (int64_t q = 0; q < geo.out_dim; ++q)
      output[n * geo.out_dim + q] = detail::fc_element(geo, input.data(), kernel.data(), b, n, q);
}

template void conv2d<float>(const ConvGeometry&, std::span<const float>, std::span<const float>,
                            std::span<const float>, std::span<float>);
template void conv2d<double>(const ConvGeometry&, std::span<const double>, std::span<const double>,
                             std::span<const double>, std::span<double>);
template void grouped_fc<float>(const FcGeometry&, std::span<const float>, std::span<const float>,
                                std::span<const float>, std::span<float>);
template void grouped_fc<double>(const FcGeometry&, std::span<const double>,
                                 std::span<const double>, std::span<const double>,
                                 std::span<double>);

}  // namespace repmlp::kernels::serial
