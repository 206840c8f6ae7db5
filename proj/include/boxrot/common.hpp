#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace boxrot {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class ErrorKind {
    InvalidArgument,
    EmptyDistribution,
    UnsupportedInitialPose,
    SimulationDiverged,
    UnsupportedForce,
    DegenerateInertia,
    NonUniformTimestamps,
    TrainingDiverged,
    Format,
    Io,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::EmptyDistribution: return "empty distribution";
    case ErrorKind::UnsupportedInitialPose: return "unsupported initial pose";
    case ErrorKind::SimulationDiverged: return "simulation diverged";
    case ErrorKind::UnsupportedForce: return "unsupported force application";
    case ErrorKind::DegenerateInertia: return "degenerate inertia";
    case ErrorKind::NonUniformTimestamps: return "non-uniform timestamps";
    case ErrorKind::TrainingDiverged: return "training diverged";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Io: return "i/o error";
    }
    return "unknown error";
}

/// Every failure raised by the library carries a kind so callers can branch
/// on it without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& detail)
        : std::runtime_error(detail.empty() ? std::string(to_string(kind))
                                            : std::string(to_string(kind)) + ": " + detail),
          kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline void require(bool condition, const std::string& what) {
    if (!condition) throw Error(ErrorKind::InvalidArgument, what);
}

/// Planar pose of a rigid body: position of a reference point and heading.
struct Pose2 {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;

    Vec2 position() const { return {x, y}; }
    bool operator==(const Pose2&) const = default;
};

inline Vec2 rotate(const Vec2& v, double angle) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

/// z-component of the planar cross product a × b.
inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

/// ω ẑ × r for a planar vector r.
inline Vec2 spin(double omega, const Vec2& r) { return {-omega * r.y(), omega * r.x()}; }

inline constexpr double kHalfPi = std::numbers::pi / 2.0;

// Little-endian binary helpers shared by the on-disk formats.
namespace io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void write_pod(std::ostream& os, const T& value) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    static_assert(std::is_trivially_copyable_v<T>);
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is) throw Error(ErrorKind::Format, "unexpected end of stream");
    return value;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
    char got[4] = {};
    is.read(got, 4);
    if (!is || std::string(got, 4) != std::string(magic, 4))
        throw Error(ErrorKind::Format, std::string("bad magic, expected ") + magic);
}

inline void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

}  // namespace io

/// 64-bit FNV-1a, used for config hashes embedded in outputs.
inline std::uint64_t fnv1a(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derive an independent stream seed from a base seed and a salt (splitmix64).
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace boxrot
