#include "cluetrace/trace.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cluetrace/error.hpp"

namespace cluetrace {

namespace {

const char* kind_name(ViolationKind kind) {
    switch (kind) {
        case ViolationKind::kShape: return "shape";
        case ViolationKind::kEntryRange: return "entry-range";
        case ViolationKind::kRowMass: return "row-mass";
        case ViolationKind::kInitialMass: return "initial-mass";
    }
    return "unknown";
}

void shape_violation(ValidationVerdict& verdict, std::string detail) {
    verdict.violations.push_back({ViolationKind::kShape, 0, 0, std::nullopt, 0.0, std::move(detail)});
}

std::vector<double> slice(const AttentionTrace& trace, std::size_t t, std::size_t l, std::size_t begin,
                          std::size_t count) {
    if (t >= trace.n_steps || l >= trace.n_layers) {
        std::ostringstream msg;
        msg << "slice (t=" << t << ", l=" << l << ") outside trace with T=" << trace.n_steps
            << ", L=" << trace.n_layers;
        reject(msg.str());
    }
    const std::size_t row = trace.row_offset(t, l);
    if (row + begin + count > trace.attn.size()) {
        reject("attention tensor shorter than declared dimensions");
    }
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = trace.attn[row + begin + i];
    }
    return out;
}

}  // namespace

std::string ValidationVerdict::summary() const {
    if (pass()) {
        return "PASS";
    }
    std::ostringstream out;
    out << "FAIL (" << violations.size() << " violation" << (violations.size() == 1 ? "" : "s") << ")";
    for (const auto& v : violations) {
        out << "\n  " << kind_name(v.kind);
        if (v.kind != ViolationKind::kShape) {
            out << " at (" << v.t << "," << v.l;
            if (v.n) {
                out << "," << *v.n;
            }
            out << ") magnitude " << v.magnitude;
        }
        if (!v.detail.empty()) {
            out << ": " << v.detail;
        }
    }
    return out.str();
}

ValidationVerdict validate_trace(const AttentionTrace& trace) {
    ValidationVerdict verdict;
    const auto& layout = trace.layout;
    const auto& grid = trace.grid;

    if (layout.n_ctx() == 0) {
        shape_violation(verdict, "empty prefix");
    }
    if (layout.query_texts.size() != layout.n_query) {
        shape_violation(verdict, "query_texts has " + std::to_string(layout.query_texts.size()) +
                                     " entries, expected n_query = " + std::to_string(layout.n_query));
    }
    if (layout.output_texts.size() != trace.n_steps) {
        shape_violation(verdict, "output_texts has " + std::to_string(layout.output_texts.size()) +
                                     " entries, expected T = " + std::to_string(trace.n_steps));
    }
    if (grid.rows == 0 || grid.cols == 0 || grid.image_w == 0 || grid.image_h == 0) {
        shape_violation(verdict, "grid and image dimensions must be positive");
    } else if (grid.size() != layout.n_vis) {
        shape_violation(verdict, "grid " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) +
                                     " does not match n_vis = " + std::to_string(layout.n_vis));
    }
    if (trace.l_max && *trace.l_max >= trace.n_layers) {
        shape_violation(verdict, "recorded l_max outside layer range");
    }
    const std::size_t n_ctx = layout.n_ctx();
    if (trace.attn.size() != trace.n_steps * trace.n_layers * n_ctx) {
        shape_violation(verdict, "tensor holds " + std::to_string(trace.attn.size()) + " entries, expected " +
                                     std::to_string(trace.n_steps * trace.n_layers * n_ctx));
        return verdict;
    }

    for (std::size_t t = 0; t < trace.n_steps; ++t) {
        for (std::size_t l = 0; l < trace.n_layers; ++l) {
            const std::size_t row = trace.row_offset(t, l);
            double mass = 0.0;
            for (std::size_t n = 0; n < n_ctx; ++n) {
                const double a = trace.attn[row + n];
                if (!std::isfinite(a) || a < 0.0 || a > 1.0) {
                    verdict.violations.push_back({ViolationKind::kEntryRange, t, l, n, a, {}});
                }
                mass += a;
            }
            if (mass > 1.0 + kRowMassTolerance) {
                verdict.violations.push_back({ViolationKind::kRowMass, t, l, std::nullopt, mass, {}});
            } else if (t == 0 && mass < 1.0 - kRowMassTolerance) {
                verdict.violations.push_back({ViolationKind::kInitialMass, t, l, std::nullopt, mass, {}});
            }
        }
    }
    return verdict;
}

std::vector<double> visual_slice(const AttentionTrace& trace, std::size_t t, std::size_t l) {
    return slice(trace, t, l, trace.layout.visual_begin(), trace.layout.n_vis);
}

std::vector<double> query_slice(const AttentionTrace& trace, std::size_t t, std::size_t l) {
    return slice(trace, t, l, trace.layout.query_begin(), trace.layout.n_query);
}

std::vector<double> system_slice(const AttentionTrace& trace, std::size_t t, std::size_t l) {
    return slice(trace, t, l, 0, trace.layout.n_sys);
}

PixelPoint token_center(const VisualGrid& grid, std::size_t v) {
    if (v >= grid.size()) {
        reject("visual token " + std::to_string(v) + " outside grid of " + std::to_string(grid.size()));
    }
    const std::size_t r = v / grid.cols;
    const std::size_t c = v % grid.cols;
    return {(static_cast<double>(c) + 0.5) * grid.patch_w(), (static_cast<double>(r) + 0.5) * grid.patch_h()};
}

PixelRect token_patch(const VisualGrid& grid, std::size_t v) {
    if (v >= grid.size()) {
        reject("visual token " + std::to_string(v) + " outside grid of " + std::to_string(grid.size()));
    }
    const auto r = static_cast<double>(v / grid.cols);
    const auto c = static_cast<double>(v % grid.cols);
    const auto w = static_cast<double>(grid.image_w);
    const auto h = static_cast<double>(grid.image_h);
    const auto cols = static_cast<double>(grid.cols);
    const auto rows = static_cast<double>(grid.rows);
    // edges as c*W/cols so the outer edges land exactly on the image border
    return {c * w / cols, r * h / rows, (c + 1.0) * w / cols, (r + 1.0) * h / rows};
}

std::set<std::size_t> bbox_to_token_set(const VisualGrid& grid, const PixelRect& bbox) {
    if (grid.size() == 0) {
        reject("empty grid");
    }
    if (!(bbox.x1 > bbox.x0) || !(bbox.y1 > bbox.y0)) {
        reject("bounding box has zero area");
    }
    if (bbox.x0 < 0.0 || bbox.y0 < 0.0 || bbox.x1 > grid.image_w || bbox.y1 > grid.image_h) {
        reject("bounding box extends outside the image");
    }
    std::set<std::size_t> tokens;
    const double pw = grid.patch_w();
    const double ph = grid.patch_h();
    // Only patch rows/cols that can intersect are visited.
    const auto c_lo = static_cast<std::size_t>(std::floor(bbox.x0 / pw));
    const auto r_lo = static_cast<std::size_t>(std::floor(bbox.y0 / ph));
    for (std::size_t r = r_lo; r < grid.rows; ++r) {
        const double py0 = static_cast<double>(r) * ph;
        if (py0 >= bbox.y1) {
            break;
        }
        const double overlap_y = std::min(bbox.y1, py0 + ph) - std::max(bbox.y0, py0);
        if (overlap_y <= 0.0) {
            continue;
        }
        for (std::size_t c = c_lo; c < grid.cols; ++c) {
            const double px0 = static_cast<double>(c) * pw;
            if (px0 >= bbox.x1) {
                break;
            }
            const double overlap_x = std::min(bbox.x1, px0 + pw) - std::max(bbox.x0, px0);
            if (overlap_x > 0.0) {
                tokens.insert(r * grid.cols + c);
            }
        }
    }
    if (tokens.empty()) {
        reject("bounding box covers no visual token");
    }
    return tokens;
}

}  // namespace cluetrace
