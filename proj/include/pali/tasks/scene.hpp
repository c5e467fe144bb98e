#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pali/numerics/tensor.hpp"

namespace pali {

/// Object classes in canonical order; list-style targets follow this order.
inline constexpr std::array<std::string_view, 16> kPalette = {
    "arrow", "ball", "bell", "boat", "cone", "cross", "cube", "drum",
    "heart", "kite", "leaf", "moon", "ring", "star", "tree", "vase"};

inline constexpr std::array<std::string_view, 8> kColorNames = {"red",    "green",  "blue", "yellow",
                                                                 "purple", "orange", "pink", "brown"};

/// 8-bit RGB of each color; rendered as exact k/255 values.
inline constexpr std::array<std::array<int, 3>, 8> kColorRgb = {{{220, 40, 40},
                                                                 {40, 160, 60},
                                                                 {40, 80, 220},
                                                                 {230, 200, 40},
                                                                 {140, 60, 180},
                                                                 {240, 130, 30},
                                                                 {240, 120, 180},
                                                                 {120, 80, 40}}};
inline constexpr std::array<int, 3> kBackgroundRgb = {235, 235, 235};

/// Toy language tags. Each non-English language is a letter-shift cipher of
/// English applied word by word.
inline constexpr std::array<std::string_view, 8> kLanguages = {"EN", "KA", "LO", "MI", "SU", "TA", "VE", "ZO"};

int class_index(std::string_view name);  // -1 when unknown
int color_index(std::string_view name);  // -1 when unknown
int language_index(std::string_view tag);  // -1 when unknown

/// Letter-shift cipher for `language` (identity for EN); non-letters pass
/// through unchanged.
std::string encipher(std::string_view text, std::string_view language);
std::string decipher(std::string_view text, std::string_view language);

struct Box {
  double ymin = 0, xmin = 0, ymax = 0, xmax = 0;
  bool operator==(const Box&) const = default;
};

struct SceneObject {
  std::string class_name;
  std::string color;
  Box box;
  bool operator==(const SceneObject&) const = default;
};

struct Glyph {
  std::string text;  // uppercase A-Z
  Box box;
  bool operator==(const Glyph&) const = default;
};

/// A synthetic image description. Boxes are in canvas pixels; rendering at
/// resolution R scales them by R / canvas.
struct SceneSpec {
  std::uint64_t seed = 0;
  int canvas = 224;
  std::string language = "EN";
  std::vector<SceneObject> objects;
  std::vector<Glyph> glyphs;

  /// Throws std::invalid_argument on unknown classes/colors/languages or
  /// boxes outside the canvas.
  void validate() const;
  bool operator==(const SceneSpec&) const = default;
};

void to_json(nlohmann::json& j, const Box& b);
void from_json(const nlohmann::json& j, Box& b);
void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);

struct SceneOptions {
  int canvas = 224;
  int min_objects = 1;
  int max_objects = 3;
  int min_glyphs = 1;
  int max_glyphs = 2;
  /// Restrict object classes (palette names); empty means the full palette.
  std::vector<std::string> classes;
  /// Restrict languages; empty means all eight.
  std::vector<std::string> languages;
};

/// Draws a scene with non-overlapping boxes; a pure function of (seed, options).
SceneSpec generate_scene(std::uint64_t seed, const SceneOptions& options = {});

/// [R, R, 3] image with values in [0, 1]. Objects are filled class-specific
/// shapes, glyphs are black per-letter block patterns.
TensorD render_scene(const SceneSpec& spec, int resolution);

/// English alt-text, e.g. "Photo of cube in red and ball in blue".
std::string english_caption(const SceneSpec& spec);
/// english_caption enciphered into the scene's language.
std::string alt_text(const SceneSpec& spec);

/// Binary PPM (P6, 8-bit). Values must be multiples of 1/255 to round-trip.
void write_ppm(const std::string& path, const TensorD& image);
TensorD read_ppm(const std::string& path);

/// Uniform integer in [0, n) from 53 random bits.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n)));
}

inline double uniform_real(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Fisher-Yates shuffle driven by uniform_index.
template <typename T>
void shuffle_in_place(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

}  // namespace pali
