#include "repmlp/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "repmlp/init.hpp"
#include "repmlp/kernels.hpp"
#include "repmlp/reparam.hpp"

namespace repmlp {

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw std::invalid_argument("precision must be f32 or f64, got '" + s + "'");
}

const char* precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

double default_tolerance(Precision p) { return p == Precision::f32 ? 1e-4 : 1e-9; }

RepMLPConfig parse_config_name(const std::string& name) {
  RepMLPConfig cfg;
  long c, o, hh, ww, h, w, g;
  int used = 0;
  if (std::sscanf(name.c_str(), "C%ld_O%ld_H%ldW%ld_h%ldw%ld_g%ld_K%n", &c, &o, &hh, &ww, &h, &w, &g, &used) != 7 ||
      used == 0)
    throw std::invalid_argument("bad block config '" + name + "' (expected e.g. C4_O8_H12W14_h6w7_g2_K1-3)");
  cfg.in_channels = c;
  cfg.out_channels = o;
  cfg.height = hh;
  cfg.width = ww;
  cfg.part_h = h;
  cfg.part_w = w;
  cfg.groups = g;
  const std::string ks = name.substr(static_cast<size_t>(used));
  if (ks != "none") {
    std::istringstream is(ks);
    std::string tok;
    while (std::getline(is, tok, '-')) {
      size_t pos = 0;
      int64_t k = 0;
      try {
        k = std::stoll(tok, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (tok.empty() || pos != tok.size()) throw std::invalid_argument("bad kernel list in '" + name + "'");
      cfg.branch_kernels.push_back(k);
    }
    if (cfg.branch_kernels.empty()) throw std::invalid_argument("bad kernel list in '" + name + "'");
  }
  cfg.validate();
  return cfg;
}

std::vector<GridCell> full_grid() {
  std::vector<GridCell> cells;
  const int64_t chans[] = {2, 4, 8};
  const int64_t sizes[] = {4, 6, 7};
  const int64_t groups[] = {1, 2, 4};
  const int64_t kernels[] = {1, 3, 5, 7};
  for (int64_t c : chans)
    for (int64_t o : chans)
      for (int64_t h : sizes)
        for (int64_t w : sizes)
          for (int64_t g : groups) {
            if (c % g || o % g) continue;
            std::vector<int64_t> allowed;
            for (int64_t k : kernels)
              if (k <= std::min(h, w)) allowed.push_back(k);
            for (int64_t ph = 1; ph <= 3; ++ph)
              for (int64_t pw = 1; pw <= 3; ++pw)
                for (uint32_t mask = 0; mask < (1u << allowed.size()); ++mask) {
                  GridCell cell;
                  cell.index = static_cast<int64_t>(cells.size());
                  RepMLPConfig& cfg = cell.cfg;
                  cfg.in_channels = c;
                  cfg.out_channels = o;
                  cfg.part_h = h;
                  cfg.part_w = w;
                  cfg.height = h * ph;
                  cfg.width = w * pw;
                  cfg.groups = g;
                  for (size_t b = 0; b < allowed.size(); ++b)
                    if (mask & (1u << b)) cfg.branch_kernels.push_back(allowed[b]);
                  cells.push_back(std::move(cell));
                }
          }
  return cells;
}

std::vector<GridCell> select_grid(const std::string& spec) {
  std::vector<GridCell> all = full_grid();
  if (spec == "full") return all;
  if (spec == "default" || spec == "quick") {
    // Fisher-Yates on raw mt19937_64 output so the subset is fixed everywhere.
    std::mt19937_64 rng(0x5eed'cafe);
    for (size_t i = all.size() - 1; i > 0; --i) std::swap(all[i], all[rng() % (i + 1)]);
    all.resize(spec == "default" ? 256 : 32);
    std::sort(all.begin(), all.end(), [](const GridCell& a, const GridCell& b) { return a.index < b.index; });
    return all;
  }
  for (const GridCell& cell : all)
    if (cell.cfg.name() == spec) return {cell};
  throw std::invalid_argument("unknown grid '" + spec + "' (use full, default, quick or a cell name)");
}

namespace {

template <typename T>
double verify_typed(const RepMLPConfig& cfg, std::mt19937_64& rng, int64_t batch) {
  const auto train = random_train_weights<T>(cfg, rng);
  const Tensor4<T> x = random_tensor<T>({batch, cfg.in_channels, cfg.height, cfg.width}, rng, -1.0, 1.0);
  const auto infer = convert_block(cfg, train);
  return static_cast<double>(max_abs_diff(repmlp_forward_train(x, cfg, train), repmlp_forward_infer(x, cfg, infer)));
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

double verify_cell(const RepMLPConfig& cfg, uint64_t seed, int64_t index, Precision p, int64_t batch) {
  if (batch < 1) throw std::invalid_argument("batch must be positive");
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(index),
                    static_cast<uint32_t>(static_cast<uint64_t>(index) >> 32)};
  std::mt19937_64 rng(seq);
  return p == Precision::f32 ? verify_typed<float>(cfg, rng, batch) : verify_typed<double>(cfg, rng, batch);
}

VerifyReport run_verify(const VerifyOptions& opt) {
  if (opt.batch < 1) throw std::invalid_argument("batch must be positive");
  VerifyReport rep;
  rep.options = opt;
  if (rep.options.tolerance < 0) rep.options.tolerance = default_tolerance(opt.precision);
  const std::vector<GridCell> cells = select_grid(opt.grid);
  rep.cells.resize(cells.size());
  const int64_t n = static_cast<int64_t>(cells.size());
  std::vector<std::string> errors(cells.size());
#pragma omp parallel for schedule(dynamic) num_threads(kernels::max_threads())
  for (int64_t i = 0; i < n; ++i) {
    CellResult& r = rep.cells[i];
    r.cell = cells[i];
    try {
      r.max_abs_diff = verify_cell(r.cell.cfg, opt.seed, r.cell.index, opt.precision, opt.batch);
    } catch (const std::exception& e) {
      errors[i] = e.what();
      r.max_abs_diff = std::numeric_limits<double>::infinity();
    }
    r.pass = r.max_abs_diff <= rep.options.tolerance;
  }
  for (const std::string& e : errors)
    if (!e.empty()) throw std::runtime_error(e);
  return rep;
}

int64_t VerifyReport::failures() const {
  return std::count_if(cells.begin(), cells.end(), [](const CellResult& r) { return !r.pass; });
}

std::string VerifyReport::text() const {
  std::ostringstream os;
  os << "verify grid=" << options.grid << " cells=" << cells.size() << " precision=" << precision_name(options.precision)
     << " tolerance=" << fmt("%g", options.tolerance) << " seed=" << options.seed << " batch=" << options.batch << "\n";
  for (const CellResult& r : cells)
    os << (r.pass ? "ok   " : "FAIL ") << r.cell.index << " " << r.cell.cfg.name() << " max_abs_diff="
       << fmt("%.3e", r.max_abs_diff) << "\n";
  double worst = 0.0;
  for (const CellResult& r : cells) worst = std::max(worst, r.max_abs_diff);
  os << "passed " << cells.size() - failures() << "/" << cells.size() << " worst=" << fmt("%.3e", worst) << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

void check_fc3(const RepMLPConfig& cfg, const FcSpec<float>& fc3, int64_t o, int64_t i, int64_t j, int64_t c) {
  cfg.validate();
  if (fc3.in_dim != cfg.fc3_in() || fc3.out_dim != cfg.fc3_out() || fc3.groups != cfg.groups)
    throw ShapeError("FC3 kernel does not match block " + cfg.name());
  const int64_t cpg = cfg.in_channels / cfg.groups;
  if (o < 0 || o >= cfg.out_channels || i < 0 || i >= cfg.part_h || j < 0 || j >= cfg.part_w || c < 0 || c >= cpg)
    throw std::out_of_range("index out of range: need o < " + std::to_string(cfg.out_channels) + ", i < " +
                            std::to_string(cfg.part_h) + ", j < " + std::to_string(cfg.part_w) + ", c < " +
                            std::to_string(cpg));
}

float entry(const RepMLPConfig& cfg, const FcSpec<float>& fc3, int64_t o, int64_t i, int64_t j, int64_t c, int64_t y,
            int64_t x) {
  const int64_t hw = cfg.part_h * cfg.part_w;
  return fc3.weight((o * cfg.part_h + i) * cfg.part_w + j, c * hw + y * cfg.part_w + x);
}

}  // namespace

std::vector<std::vector<double>> export_fc3(const RepMLPConfig& cfg, const FcSpec<float>& fc3, int64_t o, int64_t i,
                                            int64_t j, int64_t c) {
  check_fc3(cfg, fc3, o, i, j, c);
  const double floor = std::numeric_limits<float>::denorm_min();
  double m = std::numeric_limits<double>::infinity();
  for (float v : fc3.kernel) m = std::min(m, static_cast<double>(std::abs(v)));
  m = std::max(m, floor);
  std::vector<std::vector<double>> grid(cfg.part_h, std::vector<double>(cfg.part_w));
  for (int64_t y = 0; y < cfg.part_h; ++y)
    for (int64_t x = 0; x < cfg.part_w; ++x)
      grid[y][x] = std::log(std::max(static_cast<double>(std::abs(entry(cfg, fc3, o, i, j, c, y, x))), floor) / m);
  return grid;
}

std::string grid_to_csv(const std::vector<std::vector<double>>& grid) {
  std::string out;
  for (const auto& row : grid) {
    for (size_t x = 0; x < row.size(); ++x) out += (x ? "," : "") + fmt("%.9g", row[x]);
    out += "\n";
  }
  return out;
}

double window_mean_abs(const RepMLPConfig& cfg, const FcSpec<float>& fc3, int64_t o, int64_t i, int64_t j, int64_t c,
                       int64_t k) {
  check_fc3(cfg, fc3, o, i, j, c);
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("window must be odd");
  double sum = 0.0;
  int64_t count = 0;
  for (int64_t y = std::max<int64_t>(0, i - k / 2); y <= std::min(cfg.part_h - 1, i + k / 2); ++y)
    for (int64_t x = std::max<int64_t>(0, j - k / 2); x <= std::min(cfg.part_w - 1, j + k / 2); ++x) {
      sum += std::abs(entry(cfg, fc3, o, i, j, c, y, x));
      ++count;
    }
  return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------

Timing summarize(std::vector<double> s) {
  if (s.empty()) throw std::invalid_argument("no timing samples");
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  Timing t;
  t.median_ms = median(s);
  t.min_ms = *std::min_element(s.begin(), s.end());
  t.max_ms = *std::max_element(s.begin(), s.end());
  for (double& v : s) v = std::abs(v - t.median_ms);
  t.mad_ms = median(s);
  return t;
}

namespace {

template <typename F>
double time_ms(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T>
void bench_typed(const BenchOptions& opt, BenchReport& rep) {
  std::mt19937_64 rng(opt.seed);
  const RepMLPConfig& cfg = opt.cfg;
  const auto train = random_train_weights<T>(cfg, rng);
  const auto infer = convert_block(cfg, train);
  const Tensor4<T> x = random_tensor<T>({opt.batch, cfg.in_channels, cfg.height, cfg.width}, rng, -1.0, 1.0);
  volatile T sink = 0;
  // one untimed warm-up each
  sink = repmlp_forward_train(x, cfg, train).data()[0];
  sink = repmlp_forward_infer(x, cfg, infer).data()[0];
  std::vector<double> ts, ti;
  for (int64_t r = 0; r < opt.repeats; ++r) {
    ts.push_back(time_ms([&] { sink = repmlp_forward_train(x, cfg, train).data()[0]; }));
    ti.push_back(time_ms([&] { sink = repmlp_forward_infer(x, cfg, infer).data()[0]; }));
  }
  (void)sink;
  rep.train = summarize(ts);
  rep.infer = summarize(ti);
}

}  // namespace

BenchReport run_bench(const BenchOptions& opt) {
  opt.cfg.validate();
  if (opt.batch < 1) throw std::invalid_argument("batch must be positive");
  if (opt.repeats < 1) throw std::invalid_argument("repeats must be positive");
  BenchReport rep;
  rep.options = opt;
  if (opt.repeats == 1) rep.warnings.push_back("repeats=1: no dispersion estimate, timings are a single sample");
  if (opt.precision == Precision::f32)
    bench_typed<float>(opt, rep);
  else
    bench_typed<double>(opt, rep);
  return rep;
}

bool BenchReport::direction_ok() const {
  return options.cfg.branch_kernels.empty() || infer.median_ms <= train.median_ms;
}

std::string BenchReport::text() const {
  std::ostringstream os;
  os << "bench " << options.cfg.name() << " batch=" << options.batch << " repeats=" << options.repeats
     << " precision=" << precision_name(options.precision) << " threads=" << kernels::max_threads() << "\n";
  auto row = [&](const char* label, const Timing& t) {
    os << label << " median_ms=" << fmt("%.3f", t.median_ms) << " mad_ms=" << fmt("%.3f", t.mad_ms)
       << " min_ms=" << fmt("%.3f", t.min_ms) << " max_ms=" << fmt("%.3f", t.max_ms) << "\n";
  };
  row("train", train);
  row("infer", infer);
  os << "speedup " << fmt("%.2f", infer.median_ms > 0 ? train.median_ms / infer.median_ms : 0.0) << "x\n";
  for (const std::string& w : warnings) os << "warning: " << w << "\n";
  if (!direction_ok()) os << "FAIL converted block is slower than the training form\n";
  return os.str();
}

}  // namespace repmlp
