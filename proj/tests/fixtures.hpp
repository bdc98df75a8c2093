#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cluetrace/trace.hpp"

namespace cluetrace::testing {

// Canonical 2-step, 1-layer fixture: one system token, a 2x2 visual grid
// over a 100x100 image and three question tokens.
inline AttentionTrace make_f1() {
    AttentionTrace t;
    t.layout.n_sys = 1;
    t.layout.n_vis = 4;
    t.layout.n_query = 3;
    t.layout.query_texts = {"is", "helmet", "?"};
    t.layout.output_texts = {"the", "helmet"};
    t.grid = {2, 2, 100, 100};
    t.n_steps = 2;
    t.n_layers = 1;
    t.image_ref = "f1.png";
    t.attn = {0.05F, 0.10F, 0.10F, 0.05F, 0.05F, 0.05F, 0.40F, 0.20F,
              0.05F, 0.05F, 0.05F, 0.50F, 0.05F, 0.05F, 0.05F, 0.20F};
    return t;
}

// Random valid trace: every row is a random distribution whose prefix mass is
// 1 at step 0 and in (0.5, 1] afterwards.
inline AttentionTrace random_trace(std::mt19937_64& rng, std::size_t max_dim) {
    std::uniform_int_distribution<std::size_t> dim(1, max_dim);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    AttentionTrace t;
    t.n_steps = dim(rng);
    t.n_layers = dim(rng);
    t.grid.rows = std::max<std::size_t>(1, dim(rng) / 4);
    t.grid.cols = std::max<std::size_t>(1, dim(rng) / 4);
    t.grid.image_w = static_cast<std::uint32_t>(14 * t.grid.cols);
    t.grid.image_h = static_cast<std::uint32_t>(14 * t.grid.rows);
    t.layout.n_vis = t.grid.size();
    // keep N_c within max_dim where the grid allows
    const std::size_t rest = max_dim > t.layout.n_vis ? max_dim - t.layout.n_vis : 1;
    t.layout.n_sys = std::uniform_int_distribution<std::size_t>(0, std::max<std::size_t>(rest / 2, 0))(rng);
    t.layout.n_query = std::uniform_int_distribution<std::size_t>(1, std::max<std::size_t>(rest - t.layout.n_sys, 1))(rng);
    for (std::size_t q = 0; q < t.layout.n_query; ++q) {
        t.layout.query_texts.push_back("q" + std::to_string(q));
    }
    for (std::size_t s = 0; s < t.n_steps; ++s) {
        t.layout.output_texts.push_back("y" + std::to_string(s));
    }
    const std::size_t n_ctx = t.layout.n_ctx();
    t.attn.resize(t.n_steps * t.n_layers * n_ctx);
    for (std::size_t s = 0; s < t.n_steps; ++s) {
        for (std::size_t l = 0; l < t.n_layers; ++l) {
            std::vector<double> w(n_ctx);
            double total = 0.0;
            for (auto& x : w) {
                x = unit(rng) * unit(rng);
                total += x;
            }
            const double mass = s == 0 ? 1.0 : 0.5 + 0.5 * unit(rng);
            for (std::size_t n = 0; n < n_ctx; ++n) {
                t.attn[t.row_offset(s, l) + n] = static_cast<float>(w[n] / total * mass * (1.0 - 1e-6));
            }
        }
    }
    return t;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("cluetrace_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace cluetrace::testing
