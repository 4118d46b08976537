#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace molrl {

// ---------------------------------------------------------------------------
// 3-vectors
// ---------------------------------------------------------------------------

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x; y += o.y; z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x; y -= o.y; z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s; y *= s; z *= s;
    return *this;
  }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
Vec3 normalized(const Vec3& a);

// ---------------------------------------------------------------------------
// Elements
// ---------------------------------------------------------------------------

enum class Element : std::uint8_t { H = 0, C = 1, N = 2, O = 3, S = 4 };

inline constexpr int kNumElements = 5;
inline constexpr std::array<Element, kNumElements> kAllElements = {Element::H, Element::C, Element::N,
                                                                   Element::O, Element::S};

struct ElementInfo {
  std::string_view symbol;
  int atomic_number;
  double covalent_radius;  // Angstrom
  int target_valence;
};

const ElementInfo& element_info(Element e);
inline constexpr int index_of(Element e) { return static_cast<int>(e); }
inline std::string_view symbol(Element e) { return element_info(e).symbol; }
std::optional<Element> element_from_symbol(std::string_view sym);
std::optional<Element> element_from_atomic_number(int z);

/// Per-element covalent radii; defaults to the built-in table and can be overridden from config.
using RadiusTable = std::array<double, kNumElements>;
RadiusTable default_covalent_radii();

// ---------------------------------------------------------------------------
// Bags (remaining element multisets)
// ---------------------------------------------------------------------------

class FormulaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Bag {
 public:
  Bag() = default;
  explicit Bag(const std::array<int, kNumElements>& counts);

  int count(Element e) const { return counts_[index_of(e)]; }
  const std::array<int, kNumElements>& counts() const { return counts_; }
  int total() const;
  bool empty() const { return total() == 0; }

  /// Removes one atom of `e`; throws std::logic_error if none remain.
  void take(Element e);
  void add(Element e, int n = 1);

  /// Hill-like ordering: C, H, then the remaining symbols alphabetically. Count 1 is omitted.
  std::string formula_key() const;

  friend bool operator==(const Bag&, const Bag&) = default;

 private:
  std::array<int, kNumElements> counts_{};
};

/// Parses e.g. "C3H8O" or "H6C4O3". Repeated symbols accumulate ("CH3CH3" == "C2H6").
Bag parse_formula(std::string_view text);

// ---------------------------------------------------------------------------
// Canvas and MDP state
// ---------------------------------------------------------------------------

struct Atom {
  Element element;
  Vec3 position;
  friend bool operator==(const Atom&, const Atom&) = default;
};

/// Append-only list of placed atoms; the atom index equals its placement step.
class Canvas {
 public:
  Canvas() = default;
  explicit Canvas(std::vector<Atom> atoms);

  void append(Element e, const Vec3& position);
  std::size_t size() const { return atoms_.size(); }
  bool empty() const { return atoms_.empty(); }
  const Atom& operator[](std::size_t i) const { return atoms_[i]; }
  std::span<const Atom> atoms() const { return atoms_; }
  std::vector<Element> elements() const;
  Bag composition() const;

  friend bool operator==(const Canvas&, const Canvas&) = default;

 private:
  std::vector<Atom> atoms_;
};

struct State {
  Canvas canvas;
  Bag bag;
  int step = 0;
  int horizon = 0;
};

// ---------------------------------------------------------------------------
// Internal placement frame
// ---------------------------------------------------------------------------

struct LocalFrame {
  Vec3 origin;
  Vec3 e1{1, 0, 0};
  Vec3 e2{0, 1, 0};
  Vec3 e3{0, 0, 1};
};

/// (d, alpha, psi): distance from the focal atom, polar angle from e1, azimuth around e1 measured from e2.
struct SphericalCoords {
  double distance = 0.0;
  double alpha = 0.0;
  double psi = 0.0;
};

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kAlphaEps = 1e-6;

/// Frame centred on `focus`: global axes for one atom, the nearest neighbour defines e1 for two,
/// and the two nearest neighbours (index tie-break) span the e1/e2 plane for three or more.
LocalFrame build_frame(const Canvas& canvas, std::size_t focus);

Vec3 place_atom(const LocalFrame& frame, const SphericalCoords& coords);

/// Inverse of place_atom; psi is 0 at the poles. Throws std::invalid_argument at the origin.
SphericalCoords recover_coords(const LocalFrame& frame, const Vec3& position);

double clamp_alpha(double alpha);
/// Wraps into (-pi, pi].
double wrap_angle(double psi);

// ---------------------------------------------------------------------------
// XYZ files
// ---------------------------------------------------------------------------

struct XyzRecord {
  Canvas canvas;
  std::string comment;
};

void write_xyz(std::ostream& out, const Canvas& canvas, std::string_view comment);
/// Reads every frame in the stream. Throws std::runtime_error with the offending line on bad input.
std::vector<XyzRecord> read_xyz(std::istream& in);
std::vector<XyzRecord> read_xyz_file(const std::string& path);

}  // namespace molrl
