#pragma once

// Raw dense kernels. `serial` is the reference; `omp` splits the same
// per-output-element work across threads and must produce bitwise-identical
// results, since every output element is accumulated in the same order.

#include <cstdint>
#include <span>

namespace repmlp::kernels {

struct ConvGeometry {
  int64_t batch = 0;
  int64_t in_channels = 0;
  int64_t height = 0;
  int64_t width = 0;
  int64_t out_channels = 0;
  int64_t kernel_h = 0;
  int64_t kernel_w = 0;
  int64_t pad_h = 0;
  int64_t pad_w = 0;
  int64_t groups = 1;

  // Output resolution for stride 1.
  int64_t out_h() const { return height + 2 * pad_h - kernel_h + 1; }
  int64_t out_w() const { return width + 2 * pad_w - kernel_w + 1; }
};

struct FcGeometry {
  int64_t batch = 0;
  int64_t in_dim = 0;
  int64_t out_dim = 0;
  int64_t groups = 1;
};

namespace serial {
template <typename T>
void conv2d(const ConvGeometry& geo, std::span<const T> input, std::span<const T> kernel,
            std::span<const T> bias, std::span<T> output);
template <typename T>
void grouped_fc(const FcGeometry& geo, std::span<const T> input, std::span<const T> kernel,
                std::span<const T> bias, std::span<T> output);
}  // namespace serial

namespace omp {
template <typename T>
void conv2d(const ConvGeometry& geo, std::span<const T> input, std::span<const T> kernel,
            std::span<const T> bias, std::span<T> output);
template <typename T>
void grouped_fc(const FcGeometry& geo, std::span<const T> input, std::span<const T> kernel,
                std::span<const T> bias, std::span<T> output);
}  // namespace omp

// Caps the OpenMP team size used by the omp kernels. 0 restores the default.
void set_max_threads(int n);
int max_threads();
// Reads REPMLP_THREADS (positive integer) if set and applies it. Returns
// false, leaving the cap alone, when the variable is set but malformed.
bool apply_thread_cap_from_env();

}  // namespace repmlp::kernels
