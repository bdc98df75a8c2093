#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace cluetrace {

// Prefix token roles, in order: system, visual, query.
struct TokenLayout {
    std::size_t n_sys = 0;
    std::size_t n_vis = 0;
    std::size_t n_query = 0;
    std::vector<std::string> query_texts;
    std::vector<std::string> output_texts;

    std::size_t n_ctx() const { return n_sys + n_vis + n_query; }
    std::size_t visual_begin() const { return n_sys; }
    std::size_t query_begin() const { return n_sys + n_vis; }
};

// Patch grid over the source image. Visual tokens are raster ordered,
// row-major from the top-left patch.
struct VisualGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::uint32_t image_w = 0;
    std::uint32_t image_h = 0;

    std::size_t size() const { return rows * cols; }
    double patch_w() const { return static_cast<double>(image_w) / static_cast<double>(cols); }
    double patch_h() const { return static_cast<double>(image_h) / static_cast<double>(rows); }
};

struct PixelPoint {
    double x = 0.0;
    double y = 0.0;
};

// Axis-aligned pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 0.0;
    double y1 = 0.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    bool operator==(const PixelRect&) const = default;
};

// Head-averaged post-softmax attention from every output step and layer to
// the prompt prefix. Only the n_ctx prefix columns are kept, so rows after
// step 0 may carry less than unit mass.
struct AttentionTrace {
    TokenLayout layout;
    VisualGrid grid;
    std::size_t n_steps = 0;
    std::size_t n_layers = 0;
    std::vector<float> attn;  // [t][l][n], row-major
    std::string image_ref;
    std::optional<std::size_t> l_max;  // reference layer recorded by a previous layer scan

    std::size_t row_offset(std::size_t t, std::size_t l) const {
        return (t * n_layers + l) * layout.n_ctx();
    }
    float at(std::size_t t, std::size_t l, std::size_t n) const { return attn[row_offset(t, l) + n]; }
};

enum class ViolationKind {
    kShape,       // layout, grid or tensor dimensions disagree
    kEntryRange,  // entry outside [0, 1] or not finite
    kRowMass,     // prefix row mass above 1 + tol
    kInitialMass, // step-0 row mass outside 1 +/- tol
};

struct Violation {
    ViolationKind kind;
    std::size_t t = 0;
    std::size_t l = 0;
    std::optional<std::size_t> n;
    double magnitude = 0.0;
    std::string detail;
};

struct ValidationVerdict {
    std::vector<Violation> violations;

    bool pass() const { return violations.empty(); }
    std::string summary() const;
};

inline constexpr double kRowMassTolerance = 1e-4;

ValidationVerdict validate_trace(const AttentionTrace& trace);

std::vector<double> visual_slice(const AttentionTrace& trace, std::size_t t, std::size_t l);
std::vector<double> query_slice(const AttentionTrace& trace, std::size_t t, std::size_t l);
std::vector<double> system_slice(const AttentionTrace& trace, std::size_t t, std::size_t l);

PixelPoint token_center(const VisualGrid& grid, std::size_t v);

// Pixel rectangle covered by the patch of visual token v.
PixelRect token_patch(const VisualGrid& grid, std::size_t v);

// Visual tokens whose patch overlaps bbox with strictly positive area.
std::set<std::size_t> bbox_to_token_set(const VisualGrid& grid, const PixelRect& bbox);

}  // namespace cluetrace
