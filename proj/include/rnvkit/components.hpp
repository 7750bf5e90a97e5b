#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rnvkit/image.hpp"

namespace rnvkit {

struct Component {
    int label = 0;          ///< 1-based label in the label image
    std::int64_t area_px = 0;
    double centroid_row = 0.0;
    double centroid_col = 0.0;
};

struct ComponentLabels {
    Image2D<std::int32_t> labels; ///< 0 = background, k = component k
    std::vector<Component> components;
};

/// 8-connected component labeling. Labels are assigned in raster order of
/// each component's first pixel.
template <class T>
ComponentLabels label_components(const Image2D<T>& mask)
{
    ComponentLabels out;
    out.labels = Image2D<std::int32_t>(mask.rows(), mask.cols(), 0);
    std::vector<std::array<int, 2>> stack;
    std::int32_t next = 0;
    for (int r = 0; r < mask.rows(); ++r) {
        for (int c = 0; c < mask.cols(); ++c) {
            if (mask(r, c) == T{} || out.labels(r, c) != 0) continue;
            ++next;
            Component comp;
            comp.label = next;
            double sr = 0.0, sc = 0.0;
            stack.clear();
            stack.push_back({r, c});
            out.labels(r, c) = next;
            while (!stack.empty()) {
                auto [pr, pc] = stack.back();
                stack.pop_back();
                ++comp.area_px;
                sr += pr;
                sc += pc;
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int nr = pr + dr, nc = pc + dc;
                        if (nr < 0 || nc < 0 || nr >= mask.rows() || nc >= mask.cols()) continue;
                        if (mask(nr, nc) == T{} || out.labels(nr, nc) != 0) continue;
                        out.labels(nr, nc) = next;
                        stack.push_back({nr, nc});
                    }
                }
            }
            comp.centroid_row = sr / static_cast<double>(comp.area_px);
            comp.centroid_col = sc / static_cast<double>(comp.area_px);
            out.components.push_back(comp);
        }
    }
    return out;
}

/// Keeps components with area >= min_area; returns the filtered binary mask.
template <class T>
ImageU8 filter_components_by_area(const Image2D<T>& mask, std::int64_t min_area)
{
    const auto cl = label_components(mask);
    ImageU8 out(mask.rows(), mask.cols(), 0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto lab = cl.labels.data()[i];
        if (lab > 0 && cl.components[lab - 1].area_px >= min_area) out.data()[i] = 1;
    }
    return out;
}

} // namespace rnvkit
