#include "pali/tasks/scene.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "pali/model/config.hpp"

namespace pali {

namespace {

template <std::size_t N>
int find_index(const std::array<std::string_view, N>& table, std::string_view name) {
  const auto it = std::find(table.begin(), table.end(), name);
  return it == table.end() ? -1 : static_cast<int>(it - table.begin());
}

int language_shift(std::string_view language) {
  const int idx = language_index(language);
  if (idx < 0) throw std::invalid_argument("unknown language tag '" + std::string(language) + "'");
  return idx * 3;
}

std::string shift_letters(std::string_view text, int shift) {
  std::string out(text);
  for (char& c : out) {
    if (c >= 'a' && c <= 'z') c = static_cast<char>('a' + (c - 'a' + shift) % 26);
    else if (c >= 'A' && c <= 'Z') c = static_cast<char>('A' + (c - 'A' + shift) % 26);
  }
  return out;
}

// Fill predicate of each palette class over normalized box coordinates.
bool class_fill(int cls, double u, double v) {
  const double du = u - 0.5, dv = v - 0.5;
  const double r2 = du * du + dv * dv;
  switch (cls) {
    case 0: return static_cast<int>((u + v) * 4) % 2 == 0;                          // arrow: diagonal bands
    case 1: return r2 < 0.25;                                                        // ball: disc
    case 2: return static_cast<int>(v * 4) % 2 == 0;                                 // bell: horizontal bands
    case 3: return v >= 0.5;                                                         // boat: lower half
    case 4: return std::abs(du) < v / 2;                                             // cone: upward triangle
    case 5: return std::abs(du) < 0.17 || std::abs(dv) < 0.17;                       // cross
    case 6: return true;                                                             // cube: solid
    case 7: return static_cast<int>(u * 4) % 2 == 0;                                 // drum: vertical bands
    case 8: return (static_cast<int>(u * 4) + static_cast<int>(v * 4)) % 2 == 0;     // heart: checker
    case 9: return std::abs(du) + std::abs(dv) < 0.5;                                // kite: diamond
    case 10: return u < 0.5;                                                         // leaf: left half
    case 11: return r2 < 0.25 && (du - 0.2) * (du - 0.2) + dv * dv >= 0.12;          // moon: crescent
    case 12: return r2 < 0.25 && r2 > 0.1;                                           // ring: annulus
    case 13: return std::abs(u - v) < 0.17 || std::abs(u + v - 1) < 0.17;            // star: X
    case 14: return std::abs(du) < (1 - v) / 2;                                      // tree: downward triangle
    case 15: return u < 0.2 || u > 0.8 || v < 0.2 || v > 0.8;                        // vase: frame
    default: return false;
  }
}

// 3x5 block pattern per letter; multiplying by an odd constant modulo 2^15
// keeps the 26 patterns distinct and non-empty.
bool glyph_fill(char letter, double u, double v) {
  const unsigned bits = (static_cast<unsigned>(letter - 'A' + 1) * 1117u) & 0x7fffu;
  const int col = std::min(2, static_cast<int>(u * 3));
  const int row = std::min(4, static_cast<int>(v * 5));
  return (bits >> (row * 3 + col)) & 1u;
}

bool overlaps(const Box& a, const Box& b, double margin) {
  return a.ymin < b.ymax + margin && b.ymin < a.ymax + margin && a.xmin < b.xmax + margin && b.xmin < a.xmax + margin;
}

bool place(std::mt19937_64& rng, double h, double w, int canvas, const std::vector<Box>& taken, int tries, Box& out) {
  for (int t = 0; t < tries; ++t) {
    Box b;
    b.ymin = std::floor(uniform_real(rng) * (canvas - h));
    b.xmin = std::floor(uniform_real(rng) * (canvas - w));
    b.ymax = b.ymin + h;
    b.xmax = b.xmin + w;
    if (std::none_of(taken.begin(), taken.end(), [&](const Box& o) { return overlaps(b, o, 2.0); })) {
      out = b;
      return true;
    }
  }
  return false;
}

void check_box(const Box& b, int canvas, const std::string& what) {
  if (!(b.ymin >= 0 && b.xmin >= 0 && b.ymax <= canvas && b.xmax <= canvas && b.ymin < b.ymax && b.xmin < b.xmax)) {
    throw std::invalid_argument(what + ": box (" + std::to_string(b.ymin) + ", " + std::to_string(b.xmin) + ", " +
                                std::to_string(b.ymax) + ", " + std::to_string(b.xmax) + ") outside canvas " +
                                std::to_string(canvas));
  }
}

double channel(int v) { return static_cast<double>(v) / 255.0; }

}  // namespace

int class_index(std::string_view name) { return find_index(kPalette, name); }
int color_index(std::string_view name) { return find_index(kColorNames, name); }
int language_index(std::string_view tag) { return find_index(kLanguages, tag); }

std::string encipher(std::string_view text, std::string_view language) {
  return shift_letters(text, language_shift(language));
}

std::string decipher(std::string_view text, std::string_view language) {
  return shift_letters(text, (26 - language_shift(language)) % 26);
}

void SceneSpec::validate() const {
  if (canvas <= 0) throw std::invalid_argument("scene: canvas must be positive");
  if (language_index(language) < 0) throw std::invalid_argument("scene: unknown language '" + language + "'");
  for (const auto& o : objects) {
    if (class_index(o.class_name) < 0) throw std::invalid_argument("scene: unknown class '" + o.class_name + "'");
    if (color_index(o.color) < 0) throw std::invalid_argument("scene: unknown color '" + o.color + "'");
    check_box(o.box, canvas, "scene object " + o.class_name);
  }
  for (const auto& g : glyphs) {
    if (g.text.empty() || !std::all_of(g.text.begin(), g.text.end(), [](char c) { return c >= 'A' && c <= 'Z'; })) {
      throw std::invalid_argument("scene: glyph text must be non-empty uppercase A-Z, got '" + g.text + "'");
    }
    check_box(g.box, canvas, "scene glyph " + g.text);
  }
}

void to_json(nlohmann::json& j, const Box& b) { j = nlohmann::json::array({b.ymin, b.xmin, b.ymax, b.xmax}); }

void from_json(const nlohmann::json& j, Box& b) {
  b = {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()};
}

void to_json(nlohmann::json& j, const SceneSpec& s) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : s.objects) objects.push_back({{"class", o.class_name}, {"color", o.color}, {"box", o.box}});
  nlohmann::json glyphs = nlohmann::json::array();
  for (const auto& g : s.glyphs) glyphs.push_back({{"text", g.text}, {"box", g.box}});
  j = {{"seed", s.seed}, {"canvas", s.canvas}, {"language", s.language}, {"objects", objects}, {"glyphs", glyphs}};
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
  s.seed = j.at("seed").get<std::uint64_t>();
  s.canvas = j.at("canvas").get<int>();
  s.language = j.at("language").get<std::string>();
  s.objects.clear();
  for (const auto& o : j.at("objects")) {
    s.objects.push_back({o.at("class").get<std::string>(), o.at("color").get<std::string>(), o.at("box").get<Box>()});
  }
  s.glyphs.clear();
  for (const auto& g : j.at("glyphs")) s.glyphs.push_back({g.at("text").get<std::string>(), g.at("box").get<Box>()});
}

SceneSpec generate_scene(std::uint64_t seed, const SceneOptions& options) {
  if (options.min_objects < 1 || options.max_objects < options.min_objects || options.min_glyphs < 0 ||
      options.max_glyphs < options.min_glyphs) {
    throw std::invalid_argument("generate_scene: inconsistent object/glyph count bounds");
  }
  std::mt19937_64 rng(seed);
  SceneSpec spec;
  spec.seed = seed;
  spec.canvas = options.canvas;
  const double canvas = options.canvas;

  if (options.languages.empty()) {
    spec.language = std::string(kLanguages[uniform_index(rng, kLanguages.size())]);
  } else {
    spec.language = options.languages[uniform_index(rng, options.languages.size())];
  }

  std::vector<Box> taken;
  const auto n_glyphs = static_cast<int>(options.min_glyphs +
                                         uniform_index(rng, static_cast<std::size_t>(options.max_glyphs - options.min_glyphs + 1)));
  const auto n_objects = static_cast<int>(options.min_objects +
                                          uniform_index(rng, static_cast<std::size_t>(options.max_objects - options.min_objects + 1)));

  auto add_object = [&] {
    const std::string cls = options.classes.empty() ? std::string(kPalette[uniform_index(rng, kPalette.size())])
                                                    : options.classes[uniform_index(rng, options.classes.size())];
    const std::string color(kColorNames[uniform_index(rng, kColorNames.size())]);
    const double h = std::round(canvas * (0.25 + 0.2 * uniform_real(rng)));
    const double w = std::round(canvas * (0.25 + 0.2 * uniform_real(rng)));
    Box b;
    if (place(rng, h, w, options.canvas, taken, 200, b)) {
      taken.push_back(b);
      spec.objects.push_back({cls, color, b});
    }
  };

  // The first object goes onto the empty canvas so every scene has one.
  add_object();
  for (int i = 0; i < n_glyphs; ++i) {
    std::string text(2 + uniform_index(rng, 2), 'A');
    for (char& c : text) c = static_cast<char>('A' + uniform_index(rng, 26));
    const double h = std::round(canvas * 0.12);
    const double w = std::round(canvas * 0.09) * static_cast<double>(text.size());
    Box b;
    if (place(rng, h, w, options.canvas, taken, 200, b)) {
      taken.push_back(b);
      spec.glyphs.push_back({text, b});
    }
  }
  for (int i = 1; i < n_objects; ++i) add_object();
  if (spec.objects.empty()) throw std::runtime_error("generate_scene: could not place any object");
  spec.validate();
  return spec;
}

TensorD render_scene(const SceneSpec& spec, int resolution) {
  if (resolution <= 0) throw std::invalid_argument("render_scene: resolution must be positive");
  spec.validate();
  TensorD img(Shape{resolution, resolution, 3});
  const double scale = static_cast<double>(spec.canvas) / resolution;
  for (Index y = 0; y < resolution; ++y)
    for (Index x = 0; x < resolution; ++x) {
      const double cy = (static_cast<double>(y) + 0.5) * scale;
      const double cx = (static_cast<double>(x) + 0.5) * scale;
      std::array<int, 3> rgb = kBackgroundRgb;
      for (const auto& o : spec.objects) {
        const Box& b = o.box;
        if (cy < b.ymin || cy >= b.ymax || cx < b.xmin || cx >= b.xmax) continue;
        const double u = (cx - b.xmin) / (b.xmax - b.xmin);
        const double v = (cy - b.ymin) / (b.ymax - b.ymin);
        if (class_fill(class_index(o.class_name), u, v)) rgb = kColorRgb[static_cast<std::size_t>(color_index(o.color))];
      }
      for (const auto& g : spec.glyphs) {
        const Box& b = g.box;
        if (cy < b.ymin || cy >= b.ymax || cx < b.xmin || cx >= b.xmax) continue;
        const double u = (cx - b.xmin) / (b.xmax - b.xmin) * static_cast<double>(g.text.size());
        const auto letter = std::min(g.text.size() - 1, static_cast<std::size_t>(u));
        // one blank column of margin between letters
        const double within = (u - static_cast<double>(letter)) * 1.25;
        if (within < 1.0 && glyph_fill(g.text[letter], within, (cy - b.ymin) / (b.ymax - b.ymin))) rgb = {0, 0, 0};
      }
      for (Index c = 0; c < 3; ++c) img.at({y, x, c}) = channel(rgb[static_cast<std::size_t>(c)]);
    }
  return img;
}

std::string english_caption(const SceneSpec& spec) {
  std::string out = "Photo of";
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    if (i > 0) out += " and";
    out += " " + spec.objects[i].class_name + " in " + spec.objects[i].color;
  }
  return out;
}

std::string alt_text(const SceneSpec& spec) { return encipher(english_caption(spec), spec.language); }

void write_ppm(const std::string& path, const TensorD& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("write_ppm: expected [H,W,3], got " + shape_string(image.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P6\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
  std::string bytes(static_cast<std::size_t>(image.size()), '\0');
  for (Index i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    bytes[static_cast<std::size_t>(i)] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing image: " + path);
}

TensorD read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("image not found: " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error("unsupported PPM file: " + path);
  std::string bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw std::runtime_error("truncated PPM file: " + path);
  TensorD img(Shape{h, w, 3});
  for (Index i = 0; i < img.size(); ++i) img[i] = channel(static_cast<unsigned char>(bytes[static_cast<std::size_t>(i)]));
  return img;
}

}  // namespace pali
