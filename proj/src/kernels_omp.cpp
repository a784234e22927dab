#include <omp.h>

#include <cstdlib>
#include <string>

#include "kernels_detail.hpp"

namespace repmlp::kernels {

namespace {
int g_thread_cap = 0;

int team_size() { return g_thread_cap > 0 ? g_thread_cap : omp_get_max_threads(); }
}  // namespace

void set_max_threads(int n) { g_thread_cap = n > 0 ? n : 0; }

int max_threads() { return team_size(); }

bool apply_thread_cap_from_env() {
  const char* env = std::getenv("REPMLP_THREADS");
  if (!env || !*env) return true;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v <= 0 || v > 4096) return false;
  set_max_threads(static_cast<int>(v));
  return true;
}

namespace omp {

template <typename T>
void conv2d(const ConvGeometry& geo, std::span<const T> input, std::span<const T> kernel,
            std::span<const T> bias, std::span<T> output) {
  const T* b = bias.empty() ? nullptr : bias.data();
  const int64_t planes = geo.batch * geo.out_channels;
#pragma omp parallel for schedule(static) num_threads(team_size())
  for (int64_t i = 0; i < planes; ++i)
    detail::conv_plane(geo, input.data(), kernel.data(), b, output.data(), i / geo.out_channels,
                       i % geo.out_channels);
}

template <typename T>
void grouped_fc(const FcGeometry& geo, std::span<const T> input, std::span<const T> kernel,
                std::span<const T> bias, std::span<T> output) {
  const T* b = bias.empty() ? nullptr : bias.data();
  const int64_t total = geo.batch * geo.out_dim;
#pragma omp parallel for schedule(static) num_threads(team_size())
  for (int64_t i = 0; i < total; ++i)
    output[i] = detail::fc_element(geo, input.data(), kernel.data(), b, i / geo.out_dim,
                                   i % geo.out_dim);
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

}  // namespace omp
}  // namespace repmlp::kernels
