#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "rnvkit/components.hpp"
#include "rnvkit/error.hpp"
#include "rnvkit/image.hpp"

namespace rnvkit {

/// Modality byte of the OVOL container. Probability is an extension used
/// for network output maps (real payload in [0, 1], Z = 1).
enum class Modality : std::uint8_t { OCT = 0, OCTA = 1, VriMask = 2, LesionMask = 3, Probability = 4 };

struct Spacing {
    float axial = 1.0f;     ///< µm per voxel along Z
    float lateral_x = 1.0f; ///< µm per A-scan
    float lateral_y = 1.0f; ///< µm per B-scan

    friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// 3D scalar field with shape (Z, X, Y). Storage is Z-fastest:
/// index ((y * X + x) * Z + z), so one B-scan is a contiguous block.
class Volume {
public:
    Volume() = default;
    Volume(int depth, int width, int bscans, Spacing spacing, Modality modality, float fill = 0.0f)
        : z_(depth), x_(width), y_(bscans), spacing_(spacing), modality_(modality)
    {
        if (depth < 1 || width < 1 || bscans < 1) throw ShapeError("Volume: all dimensions must be >= 1");
        if (!(spacing.axial > 0 && spacing.lateral_x > 0 && spacing.lateral_y > 0))
            throw ConfigError("Volume: spacings must be > 0");
        data_.assign(static_cast<std::size_t>(depth) * width * bscans, fill);
    }

    int depth() const noexcept { return z_; }
    int width() const noexcept { return x_; }
    int bscans() const noexcept { return y_; }
    const Spacing& spacing() const noexcept { return spacing_; }
    Modality modality() const noexcept { return modality_; }
    void set_modality(Modality m) noexcept { modality_ = m; }

    std::size_t index(int z, int x, int y) const noexcept
    {
        return (static_cast<std::size_t>(y) * x_ + x) * z_ + z;
    }
    float& at(int z, int x, int y) noexcept { return data_[index(z, x, y)]; }
    float at(int z, int x, int y) const noexcept { return data_[index(z, x, y)]; }

    /// Contiguous A-scan at (x, y), length Z.
    std::span<float> column(int x, int y) noexcept { return {data_.data() + index(0, x, y), std::size_t(z_)}; }
    std::span<const float> column(int x, int y) const noexcept
    {
        return {data_.data() + index(0, x, y), std::size_t(z_)};
    }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }

    bool same_shape(const Volume& o) const noexcept { return z_ == o.z_ && x_ == o.x_ && y_ == o.y_; }

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    int z_ = 0, x_ = 0, y_ = 0;
    Spacing spacing_{};
    Modality modality_ = Modality::OCT;
    std::vector<float> data_;
};

/// Per-column index of the first retina voxel. Shape (X, Y); value Z means
/// the column holds no retina.
struct VriSurface {
    int depth = 0; ///< Z of the volume the surface belongs to
    Image2D<std::int32_t> z;

    int width() const noexcept { return z.rows(); }
    int bscans() const noexcept { return z.cols(); }
    friend bool operator==(const VriSurface&, const VriSurface&) = default;
};

/// Binary vitreous(0) / retina(1) labels, shape (Z, X, Y), Z-fastest.
struct VriMask {
    int depth = 0, width = 0, bscans = 0;
    std::vector<std::uint8_t> labels;

    std::uint8_t at(int z, int x, int y) const noexcept
    {
        return labels[(static_cast<std::size_t>(y) * width + x) * depth + z];
    }
    std::uint8_t& at(int z, int x, int y) noexcept
    {
        return labels[(static_cast<std::size_t>(y) * width + x) * depth + z];
    }
    friend bool operator==(const VriMask&, const VriMask&) = default;
};

/// Binary en-face lesion mask of shape (X, Y).
struct LesionMask {
    ImageU8 mask;

    ComponentLabels components() const { return label_components(mask); }
    std::int64_t foreground() const { return static_cast<std::int64_t>(count_nonzero(mask)); }
};

/// Area of one en-face pixel in mm².
inline double pixel_area_mm2(const Spacing& s)
{
    return (static_cast<double>(s.lateral_x) / 1000.0) * (static_cast<double>(s.lateral_y) / 1000.0);
}

// --- OVOL container -------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p)
{
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::string read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

constexpr std::size_t kOvolHeaderBytes = 8 + 12 + 12;

} // namespace detail

inline std::string encode_volume(const Volume& v)
{
    std::string out;
    out.reserve(detail::kOvolHeaderBytes + v.data().size() * 4);
    out += "OVOL";
    out.push_back(1);
    out.push_back(static_cast<char>(v.modality()));
    out.push_back(0);
    out.push_back(0);
    detail::put_u32(out, static_cast<std::uint32_t>(v.depth()));
    detail::put_u32(out, static_cast<std::uint32_t>(v.width()));
    detail::put_u32(out, static_cast<std::uint32_t>(v.bscans()));
    detail::put_f32(out, v.spacing().axial);
    detail::put_f32(out, v.spacing().lateral_x);
    detail::put_f32(out, v.spacing().lateral_y);
    for (float f : v.data()) detail::put_f32(out, f);
    return out;
}

inline Volume decode_volume(const std::string& bytes)
{
    if (bytes.size() < detail::kOvolHeaderBytes) throw FormatError("OVOL: truncated header");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (std::memcmp(p, "OVOL", 4) != 0) throw FormatError("OVOL: bad magic");
    if (p[4] != 1) throw FormatError("OVOL: unsupported version " + std::to_string(p[4]));
    if (p[5] > static_cast<unsigned char>(Modality::Probability)) throw FormatError("OVOL: unknown modality");
    const auto z = detail::get_u32(p + 8), x = detail::get_u32(p + 12), y = detail::get_u32(p + 16);
    Spacing s{detail::get_f32(p + 20), detail::get_f32(p + 24), detail::get_f32(p + 28)};
    if (z == 0 || x == 0 || y == 0 || z > (1u << 20) || x > (1u << 20) || y > (1u << 20))
        throw FormatError("OVOL: non-positive or absurd dimensions");
    if (!(s.axial > 0 && s.lateral_x > 0 && s.lateral_y > 0)) throw FormatError("OVOL: non-positive spacing");
    const std::size_t n = std::size_t(z) * x * y;
    if (bytes.size() < detail::kOvolHeaderBytes + n * 4) throw FormatError("OVOL: truncated payload");
    Volume v(int(z), int(x), int(y), s, static_cast<Modality>(p[5]));
    const unsigned char* q = p + detail::kOvolHeaderBytes;
    auto d = v.data();
    for (std::size_t i = 0; i < n; ++i) d[i] = detail::get_f32(q + 4 * i);
    return v;
}

inline void save_volume(const Volume& v, const std::filesystem::path& path)
{
    detail::write_file_bytes(path, encode_volume(v));
}

inline Volume load_volume(const std::filesystem::path& path)
{
    return decode_volume(detail::read_file_bytes(path));
}

// --- Surface / mask conversions -------------------------------------------

/// labels[z,x,y] = 1 iff z >= s.z[x,y].
inline VriMask surface_to_mask(const VriSurface& s, int depth)
{
    if (depth < 1) throw ShapeError("surface_to_mask: depth must be >= 1");
    VriMask m{depth, s.width(), s.bscans(), {}};
    m.labels.assign(static_cast<std::size_t>(depth) * s.width() * s.bscans(), 0);
    for (int y = 0; y < s.bscans(); ++y)
        for (int x = 0; x < s.width(); ++x) {
            const int zs = s.z(x, y);
            if (zs < 0 || zs > depth) throw BoundsError("surface_to_mask: surface depth out of range");
            for (int z = zs; z < depth; ++z) m.at(z, x, y) = 1;
        }
    return m;
}

/// Best step fit of one binary column: the z* minimizing the number of 1s
/// above z* plus 0s at/below z*, smallest z* on ties.
template <class It>
int fit_step(It first, It last)
{
    const int depth = static_cast<int>(std::distance(first, last));
    int total_ones = 0;
    for (auto it = first; it != last; ++it) total_ones += (*it != 0);
    int best_z = 0;
    int best_err = depth - total_ones; // z* = 0: every zero is an error
    int ones_above = 0;
    int z = 0;
    for (auto it = first; it != last; ++it) {
        ones_above += (*it != 0);
        ++z;
        const int zeros_below = (depth - z) - (total_ones - ones_above);
        const int err = ones_above + zeros_below;
        if (err < best_err) {
            best_err = err;
            best_z = z;
        }
    }
    return best_z;
}

inline VriSurface mask_to_surface(const VriMask& m)
{
    VriSurface s{m.depth, Image2D<std::int32_t>(m.width, m.bscans, 0)};
    for (int y = 0; y < m.bscans; ++y)
        for (int x = 0; x < m.width; ++x) {
            const auto off = (static_cast<std::size_t>(y) * m.width + x) * m.depth;
            const auto* col = m.labels.data() + off;
            s.z(x, y) = fit_step(col, col + m.depth);
        }
    return s;
}

inline Volume vri_mask_to_volume(const VriMask& m, Spacing spacing)
{
    Volume v(m.depth, m.width, m.bscans, spacing, Modality::VriMask);
    auto d = v.data();
    for (std::size_t i = 0; i < m.labels.size(); ++i) d[i] = m.labels[i] ? 1.0f : 0.0f;
    return v;
}

inline VriMask volume_to_vri_mask(const Volume& v)
{
    if (v.modality() != Modality::VriMask) throw FormatError("expected VRI mask container (modality 2)");
    VriMask m{v.depth(), v.width(), v.bscans(), {}};
    m.labels.resize(v.data().size());
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        const float f = v.data()[i];
        if (f != 0.0f && f != 1.0f) throw FormatError("VRI mask payload must be 0/1");
        m.labels[i] = f != 0.0f;
    }
    return m;
}

/// Wraps a 2D (X, Y) image into a Z = 1 container.
template <class T>
Volume image_to_volume(const Image2D<T>& img, Spacing spacing, Modality modality)
{
    Volume v(1, img.rows(), img.cols(), spacing, modality);
    for (int y = 0; y < img.cols(); ++y)
        for (int x = 0; x < img.rows(); ++x) v.at(0, x, y) = static_cast<float>(img(x, y));
    return v;
}

inline ImageF volume_to_image(const Volume& v)
{
    if (v.depth() != 1) throw FormatError("expected a Z = 1 container");
    ImageF img(v.width(), v.bscans());
    for (int y = 0; y < v.bscans(); ++y)
        for (int x = 0; x < v.width(); ++x) img(x, y) = v.at(0, x, y);
    return img;
}

inline void save_lesion_mask(const LesionMask& m, Spacing spacing, const std::filesystem::path& path)
{
    save_volume(image_to_volume(m.mask, spacing, Modality::LesionMask), path);
}

inline LesionMask load_lesion_mask(const std::filesystem::path& path, Spacing* spacing = nullptr)
{
    const Volume v = load_volume(path);
    if (v.modality() != Modality::LesionMask) throw FormatError("expected lesion mask container (modality 3)");
    const ImageF img = volume_to_image(v);
    LesionMask m{ImageU8(img.rows(), img.cols(), 0)};
    for (std::size_t i = 0; i < img.size(); ++i) {
        const float f = img.data()[i];
        if (f != 0.0f && f != 1.0f) throw FormatError("lesion mask payload must be 0/1");
        m.mask.data()[i] = f != 0.0f;
    }
    if (spacing) *spacing = v.spacing();
    return m;
}

inline void save_surface(const VriSurface& s, Spacing spacing, const std::filesystem::path& path)
{
    save_volume(vri_mask_to_volume(surface_to_mask(s, s.depth), spacing), path);
}

inline VriSurface load_surface(const std::filesystem::path& path, Spacing* spacing = nullptr)
{
    const Volume v = load_volume(path);
    if (spacing) *spacing = v.spacing();
    return mask_to_surface(volume_to_vri_mask(v));
}

// --- B-scan triplets --------------------------------------------------------

/// B-scan y of a volume as a (Z, X) image.
inline ImageF bscan(const Volume& v, int y)
{
    ImageF img(v.depth(), v.width());
    for (int x = 0; x < v.width(); ++x) {
        const auto col = v.column(x, y);
        for (int z = 0; z < v.depth(); ++z) img(z, x) = col[z];
    }
    return img;
}

/// Six (Z, X) channels: OCT(y-1), OCT(y), OCT(y+1), OCTA(y-1), OCTA(y), OCTA(y+1).
/// Neighbours outside [0, Y) replicate the edge B-scan.
inline ImageStack extract_triplet(const Volume& oct, const Volume& octa, int y)
{
    if (!oct.same_shape(octa)) throw ShapeError("extract_triplet: OCT/OCTA shape mismatch");
    if (y < 0 || y >= oct.bscans()) throw BoundsError("extract_triplet: B-scan index out of range");
    ImageStack out;
    out.reserve(6);
    for (const Volume* v : {&oct, &octa})
        for (int dy = -1; dy <= 1; ++dy) out.push_back(bscan(*v, std::clamp(y + dy, 0, v->bscans() - 1)));
    return out;
}

} // namespace rnvkit
