#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "fwn/grid.hpp"
#include "fwn/rng.hpp"

namespace fwn::test {

inline ImageTensor random_image(Rng& rng, int h, int w, int c) {
    ImageTensor img(h, w, c);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

inline FlowField random_flow(Rng& rng, int h, int w, double lo, double hi) {
    FlowField f(h, w);
    for (double& v : f.vectors) v = rng.uniform(lo, hi);
    return f;
}

// Fractional parts kept away from integers and half-integers.
inline FlowField random_noninteger_flow(Rng& rng, int h, int w, double mag) {
    FlowField f(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            f.set(x, y, rng.uniform_int(-static_cast<int>(mag), static_cast<int>(mag)) + rng.uniform(0.2, 0.4),
                  rng.uniform_int(-static_cast<int>(mag), static_cast<int>(mag)) + rng.uniform(0.2, 0.4));
    return f;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Fresh scratch directory under the build tree.
class TempDir {
  public:
    explicit TempDir(const std::string& name) {
        path_ = std::filesystem::temp_directory_path() / ("fwn_test_" + name + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    std::string str() const { return path_.string(); }
    std::filesystem::path path() const { return path_; }

  private:
    std::filesystem::path path_;
};

}  // namespace fwn::test
