#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "rnvkit/preprocess.hpp"
#include "rnvkit/volume.hpp"

namespace rnvkit {

inline constexpr double kGccThicknessUm = 80.0;
inline constexpr double kDefaultSubtractionScale = 0.8;

/// GCC slab thickness in voxels: round(80 µm / axial spacing), half away from zero.
inline int gcc_depth_px(double axial_um)
{
    if (!(axial_um > 0)) throw ConfigError("gcc_depth_px: axial spacing must be > 0");
    return static_cast<int>(std::lround(kGccThicknessUm / axial_um));
}

namespace detail {

inline void check_surface(const Volume& v, const VriSurface& s, const char* what)
{
    if (s.width() != v.width() || s.bscans() != v.bscans())
        throw ShapeError(std::string(what) + ": surface lateral shape does not match volume");
    for (auto z : s.z.data())
        if (z < 0 || z > v.depth()) throw BoundsError(std::string(what) + ": surface depth out of [0, Z]");
}

/// Max of v over z in [lo, hi) per column; empty range gives 0.
template <class Range>
ImageF project_range(const Volume& v, Range&& range)
{
    ImageF out(v.width(), v.bscans(), 0.0f);
    for (int y = 0; y < v.bscans(); ++y)
        for (int x = 0; x < v.width(); ++x) {
            const auto [lo, hi] = range(x, y);
            if (lo >= hi) continue;
            const auto col = v.column(x, y);
            out(x, y) = *std::max_element(col.begin() + lo, col.begin() + hi);
        }
    return out;
}

} // namespace detail

/// Maximum projection of the vitreous slab [0, s.z) of every column.
inline ImageF project_vitreous(const Volume& v, const VriSurface& s)
{
    detail::check_surface(v, s, "project_vitreous");
    return detail::project_range(v, [&](int x, int y) { return std::pair{0, int(s.z(x, y))}; });
}

/// Maximum projection of the GCC slab [s.z, s.z + d) with d = 80 µm in voxels.
inline ImageF project_gcc(const Volume& v, const VriSurface& s)
{
    detail::check_surface(v, s, "project_gcc");
    const int d = gcc_depth_px(v.spacing().axial);
    return detail::project_range(v, [&](int x, int y) {
        const int z = s.z(x, y);
        return std::pair{z, std::min(z + d, v.depth())};
    });
}

/// max(0, vitreous - k * gcc), elementwise.
inline ImageF subtract_octa(const ImageF& vitreous, const ImageF& gcc, double k = kDefaultSubtractionScale)
{
    require_same_shape(vitreous, gcc, "subtract_octa");
    if (!(k >= 0)) throw ConfigError("subtract_octa: scale must be >= 0");
    ImageF out(vitreous.rows(), vitreous.cols());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] = std::max(0.0f, static_cast<float>(vitreous.data()[i] - k * gcc.data()[i]));
    return out;
}

struct StackProvenance {
    std::string oct_id, octa_id, surface_id;
    double subtraction_scale = kDefaultSubtractionScale;
};

/// The five raw en-face projections feeding the lesion network.
struct EnFaceStack {
    ImageF oct_vitreous, octa_vitreous, oct_gcc, octa_gcc, octa_subtracted;
    StackProvenance provenance;

    static constexpr int kChannels = 5;
    static constexpr int kOctChannels = 2;
    static constexpr int kOctaChannels = 3;

    int width() const { return oct_vitreous.rows(); }
    int bscans() const { return oct_vitreous.cols(); }
};

inline EnFaceStack build_stack(const Volume& oct, const Volume& octa, const VriSurface& s,
                               double k = kDefaultSubtractionScale, StackProvenance provenance = {})
{
    if (!oct.same_shape(octa)) throw ShapeError("build_stack: OCT/OCTA shape mismatch");
    EnFaceStack st;
    st.oct_vitreous = project_vitreous(oct, s);
    st.octa_vitreous = project_vitreous(octa, s);
    st.oct_gcc = project_gcc(oct, s);
    st.octa_gcc = project_gcc(octa, s);
    st.octa_subtracted = subtract_octa(st.octa_vitreous, st.octa_gcc, k);
    st.provenance = std::move(provenance);
    st.provenance.subtraction_scale = k;
    return st;
}

/// Normalized network input: OCT branch {vitreous, gcc} then OCTA branch
/// {vitreous, gcc, subtracted}, each channel z-scored per column and floored.
inline ImageStack stack_channels(const EnFaceStack& st)
{
    return normalize_stack({st.oct_vitreous, st.oct_gcc, st.octa_vitreous, st.octa_gcc, st.octa_subtracted});
}

} // namespace rnvkit
