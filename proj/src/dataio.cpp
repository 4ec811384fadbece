#include "frshield/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "frshield/binio.hpp"
#include "frshield/rng.hpp"

namespace frshield::data {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Splits one CSV line; double quotes group a field and "" escapes a quote.
std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.emplace_back(trim(cur));
  return cells;
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    start = end + 1;
  }
  return lines;
}

bool blank(std::string_view s) { return trim(s).empty(); }

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double parse_number(std::string_view cell, std::uint64_t row, const std::string& column) {
  cell = trim(cell);
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && cell.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(value))
    fail(ErrorKind::Data, "row " + std::to_string(row) + ", column '" + column +
                              "': cannot parse '" + std::string(cell) + "' as a number");
  return value;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

// ---------------------------------------------------------------- schema

std::size_t Schema::label_index() const {
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (fields[i].kind == FieldKind::Label) return i;
  fail(ErrorKind::Data, "schema has no label field");
}

std::size_t Schema::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (fields[i].name == name) return i;
  fail(ErrorKind::Data, "schema has no field named '" + name + "'");
}

Schema parse_schema(std::string_view text) {
  const auto lines = split_lines(text);
  std::size_t li = 0;
  while (li < lines.size() && blank(lines[li])) ++li;
  require(li < lines.size(), ErrorKind::Data, "empty schema");
  const auto header = split_csv_line(lines[li]);
  require(header.size() == 3 && lower(header[0]) == "name" && lower(header[1]) == "kind" &&
              lower(header[2]) == "drop",
          ErrorKind::Data, "schema header must be 'name,kind,drop'");
  Schema schema;
  std::set<std::string> seen;
  for (++li; li < lines.size(); ++li) {
    if (blank(lines[li]) || trim(lines[li]).front() == '#') continue;
    const auto cells = split_csv_line(lines[li]);
    require(cells.size() == 3, ErrorKind::Data,
            "schema line " + std::to_string(li + 1) + " needs 3 columns");
    Field f;
    f.name = cells[0];
    require(!f.name.empty() && seen.insert(f.name).second, ErrorKind::Data,
            "schema field names must be unique and non-empty: '" + f.name + "'");
    const auto kind = lower(cells[1]);
    if (kind == "numeric") f.kind = FieldKind::Numeric;
    else if (kind == "categorical") f.kind = FieldKind::Categorical;
    else if (kind == "label") f.kind = FieldKind::Label;
    else fail(ErrorKind::Data, "unknown field kind '" + cells[1] + "'");
    const auto drop = lower(cells[2]);
    if (drop == "1" || drop == "true" || drop == "yes") f.drop = true;
    else if (drop == "0" || drop == "false" || drop == "no" || drop.empty()) f.drop = false;
    else fail(ErrorKind::Data, "bad drop flag '" + cells[2] + "'");
    schema.fields.push_back(std::move(f));
  }
  require(!schema.fields.empty(), ErrorKind::Data, "empty schema");
  const auto labels = std::count_if(schema.fields.begin(), schema.fields.end(),
                                    [](const Field& f) { return f.kind == FieldKind::Label; });
  require(labels == 1, ErrorKind::Data, "schema needs exactly one label field");
  return schema;
}

Schema load_schema(const std::filesystem::path& path) { return parse_schema(read_text(path)); }

// ---------------------------------------------------------------- records

Label parse_label(std::string_view text) {
  const auto s = lower(trim(text));
  if (s == "0" || s == "pristine" || s == "normal" || s == "benign") return Label::Pristine;
  if (s == "1" || s == "manipulated" || s == "attack" || s == "malicious")
    return Label::Manipulated;
  fail(ErrorKind::Data, "unrecognized label '" + std::string(text) + "'");
}

std::vector<RawRecord> parse_csv_records(std::string_view text, const Schema& schema) {
  require(!schema.fields.empty(), ErrorKind::Data, "empty schema");
  const auto label_col = schema.label_index();
  const auto lines = split_lines(text);
  std::size_t li = 0;
  while (li < lines.size() && blank(lines[li])) ++li;
  require(li < lines.size(), ErrorKind::Data, "CSV has no header row");
  const auto header = split_csv_line(lines[li]);

  // column position in the file for every schema field
  std::vector<std::size_t> position(schema.fields.size());
  for (std::size_t f = 0; f < schema.fields.size(); ++f) {
    const auto it = std::find(header.begin(), header.end(), schema.fields[f].name);
    if (it == header.end())
      fail(ErrorKind::Data, "missing column '" + schema.fields[f].name + "' in CSV header");
    position[f] = static_cast<std::size_t>(it - header.begin());
  }
  for (const auto& h : header) {
    const bool known = std::any_of(schema.fields.begin(), schema.fields.end(),
                                   [&](const Field& f) { return f.name == h; });
    require(known, ErrorKind::Data, "CSV column '" + h + "' is not in the schema");
  }

  std::vector<RawRecord> records;
  std::uint64_t row = 0;
  for (++li; li < lines.size(); ++li) {
    if (blank(lines[li])) continue;
    ++row;
    const auto cells = split_csv_line(lines[li]);
    if (cells.size() != header.size())
      fail(ErrorKind::Data, "row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                " columns, expected " + std::to_string(header.size()));
    RawRecord rec;
    rec.row = row;
    rec.values.reserve(schema.fields.size());
    for (std::size_t f = 0; f < schema.fields.size(); ++f) {
      const auto& cell = cells[position[f]];
      switch (schema.fields[f].kind) {
        case FieldKind::Numeric:
          rec.values.emplace_back(parse_number(cell, row, schema.fields[f].name));
          break;
        case FieldKind::Categorical:
        case FieldKind::Label: rec.values.emplace_back(cell); break;
      }
    }
    try {
      rec.label = parse_label(std::get<std::string>(rec.values[label_col]));
    } catch (const Error& e) {
      fail(ErrorKind::Data, "row " + std::to_string(row) + ": " + e.what());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<RawRecord> load_csv_records(const std::filesystem::path& path, const Schema& schema) {
  return parse_csv_records(read_text(path), schema);
}

// ---------------------------------------------------------------- features and images

FeatureTable extract_features(std::span<const RawRecord> records, const Schema& schema,
                              std::span<const std::string> drop_columns) {
  std::vector<bool> dropped(schema.fields.size(), false);
  for (std::size_t f = 0; f < schema.fields.size(); ++f) dropped[f] = schema.fields[f].drop;
  for (const auto& name : drop_columns) dropped[schema.index_of(name)] = true;

  std::vector<std::size_t> keep;
  FeatureTable table;
  for (std::size_t f = 0; f < schema.fields.size(); ++f) {
    if (dropped[f] || schema.fields[f].kind == FieldKind::Label) continue;
    keep.push_back(f);
    table.names.push_back(schema.fields[f].name);
  }
  if (keep.size() != kFeatureCount)
    fail(ErrorKind::Data, "expected 42 features after dropping columns, got " +
                              std::to_string(keep.size()));

  // integer codes for categorical columns, by sorted distinct value
  std::map<std::size_t, std::map<std::string, double>> codes;
  for (auto f : keep) {
    if (schema.fields[f].kind != FieldKind::Categorical) continue;
    std::set<std::string> values;
    for (const auto& r : records) values.insert(std::get<std::string>(r.values.at(f)));
    double code = 0.0;
    for (const auto& v : values) codes[f][v] = code++;
  }

  for (const auto& r : records) {
    require(r.values.size() == schema.fields.size(), ErrorKind::Data,
            "record field count does not match schema");
    std::array<double, kFeatureCount> row{};
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const auto& v = r.values[keep[k]];
      row[k] = std::holds_alternative<double>(v) ? std::get<double>(v)
                                                 : codes[keep[k]].at(std::get<std::string>(v));
    }
    table.rows.push_back(row);
    table.labels.push_back(r.label);
    table.ids.push_back(r.row);
  }
  return table;
}

MinMaxScaling fit_min_max(std::span<const std::array<double, kFeatureCount>> rows) {
  MinMaxScaling s;
  s.min.fill(0.0);
  s.max.fill(0.0);
  if (rows.empty()) return s;
  s.min = rows[0];
  s.max = rows[0];
  for (const auto& r : rows)
    for (std::size_t k = 0; k < kFeatureCount; ++k) {
      s.min[k] = std::min(s.min[k], r[k]);
      s.max[k] = std::max(s.max[k], r[k]);
    }
  for (std::size_t k = 0; k < kFeatureCount; ++k)
    if (s.max[k] == s.min[k])
      warn("feature " + std::to_string(k) + " is constant; it encodes to 0");
  return s;
}

std::pair<std::size_t, std::size_t> grid_cell_for_pixel(std::size_t y, std::size_t x) {
  return {y * kGridRows / kImageSide, x * kGridCols / kImageSide};
}

ImageSample encode_image(const std::array<double, kFeatureCount>& features,
                         const MinMaxScaling& scaling, Label label, std::uint64_t id) {
  std::array<float, kFeatureCount> grid{};
  for (std::size_t k = 0; k < kFeatureCount; ++k) {
    const double span = scaling.max[k] - scaling.min[k];
    double v = span > 0.0 ? (features[k] - scaling.min[k]) / span : 0.0;
    grid[k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  Tensor pixels({1, kImageSide, kImageSide});
  for (std::size_t y = 0; y < kImageSide; ++y)
    for (std::size_t x = 0; x < kImageSide; ++x) {
      const auto [r, c] = grid_cell_for_pixel(y, x);
      pixels[y * kImageSide + x] = grid[r * kGridCols + c];
    }
  return {std::move(pixels), label, id};
}

std::vector<ImageSample> preprocess_to_images(std::span<const RawRecord> records,
                                              const Schema& schema,
                                              std::span<const std::string> drop_columns) {
  const auto table = extract_features(records, schema, drop_columns);
  const auto scaling = fit_min_max(table.rows);
  std::vector<ImageSample> out;
  out.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    out.push_back(encode_image(table.rows[i], scaling, table.labels[i], table.ids[i]));
  return out;
}

// ---------------------------------------------------------------- splitting

SplitIndices split_indices(std::span<const Label> labels, const SplitRatios& ratios,
                           std::uint64_t seed) {
  require(!labels.empty(), ErrorKind::InvalidArgument, "cannot split an empty dataset");
  const double r[3] = {ratios.train, ratios.validation, ratios.test};
  for (double v : r)
    require(v >= 0.0 && std::isfinite(v), ErrorKind::InvalidArgument,
            "split ratios must be non-negative");
  require(std::abs(r[0] + r[1] + r[2] - 1.0) <= 1e-9, ErrorKind::InvalidArgument,
          "split ratios must sum to 1");

  const std::size_t n = labels.size();
  // largest-remainder apportionment of n into three parts
  std::size_t sizes[3];
  double frac[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = r[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (frac[i] > frac[best] + 1e-12) best = i;
    sizes[best] += 1;
    frac[best] = -1.0;
    ++assigned;
  }
  while (assigned > n) {  // only reachable through the 1e-9 rounding guard
    for (int i = 2; i >= 0; --i)
      if (sizes[i] > 0) {
        --sizes[i];
        --assigned;
        break;
      }
  }

  // Shuffle each class, then interleave them proportionally so that every
  // contiguous window has class counts within one of the expected share.
  Rng rng(seed);
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < n; ++i) by_class[label_index(labels[i])].push_back(i);
  for (auto& c : by_class) rng.shuffle(c);
  std::vector<std::size_t> order;
  order.reserve(n);
  std::size_t taken[2] = {0, 0};
  for (std::size_t p = 0; p < n; ++p) {
    int pick = -1;
    double best = 2.0;
    for (int c = 0; c < 2; ++c) {
      if (taken[c] == by_class[c].size()) continue;
      const double pos = (static_cast<double>(taken[c]) + 0.5) / static_cast<double>(by_class[c].size());
      if (pos < best) {
        best = pos;
        pick = c;
      }
    }
    order.push_back(by_class[pick][taken[pick]++]);
  }

  SplitIndices out;
  auto first = order.begin();
  out.train.assign(first, first + static_cast<std::ptrdiff_t>(sizes[0]));
  first += static_cast<std::ptrdiff_t>(sizes[0]);
  out.validation.assign(first, first + static_cast<std::ptrdiff_t>(sizes[1]));
  first += static_cast<std::ptrdiff_t>(sizes[1]);
  out.test.assign(first, order.end());
  return out;
}

DatasetSplit split_dataset(std::span<const ImageSample> samples, const SplitRatios& ratios,
                           std::uint64_t seed) {
  std::vector<Label> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  const auto idx = split_indices(labels, ratios, seed);
  DatasetSplit split;
  split.seed = seed;
  for (auto i : idx.train) split.train.push_back(samples[i]);
  for (auto i : idx.validation) split.validation.push_back(samples[i]);
  for (auto i : idx.test) split.test.push_back(samples[i]);
  return split;
}

DatasetSplit preprocess_split(std::span<const RawRecord> records, const Schema& schema,
                              std::span<const std::string> drop_columns,
                              const SplitRatios& ratios, std::uint64_t seed) {
  const auto table = extract_features(records, schema, drop_columns);
  const auto idx = split_indices(table.labels, ratios, seed);
  std::vector<std::array<double, kFeatureCount>> train_rows;
  for (auto i : idx.train) train_rows.push_back(table.rows[i]);
  const auto scaling = fit_min_max(train_rows);
  DatasetSplit split;
  split.seed = seed;
  auto encode = [&](const std::vector<std::size_t>& ids, std::vector<ImageSample>& out) {
    for (auto i : ids) out.push_back(encode_image(table.rows[i], scaling, table.labels[i], table.ids[i]));
  };
  encode(idx.train, split.train);
  encode(idx.validation, split.validation);
  encode(idx.test, split.test);
  return split;
}

// ---------------------------------------------------------------- synthetic corpus

SynthPrototypes synth_prototypes(double class_separation) {
  require(class_separation > 0.0 && std::isfinite(class_separation), ErrorKind::InvalidArgument,
          "class separation must be positive");
  // Fixed prototype stream, independent of the sample seed.
  Rng rng(0x46525348494c44ull);
  SynthPrototypes p;
  for (std::size_t k = 0; k < kFeatureCount; ++k) {
    p.pristine[k] = rng.uniform(2.0, 8.0);
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    p.manipulated[k] = p.pristine[k] + sign * class_separation / 4.0;
  }
  return p;
}

double synth_linear_oracle_accuracy(double class_separation) {
  return (1.0 - kSynthBurstRate) * normal_cdf(class_separation * std::sqrt(static_cast<double>(kFeatureCount)) / 8.0);
}

FeatureTable synth_features(std::size_t count, double class_separation, std::uint64_t seed) {
  const auto proto = synth_prototypes(class_separation);
  Rng rng(seed);
  FeatureTable t;
  for (std::size_t k = 0; k < kFeatureCount; ++k) t.names.push_back("f" + std::to_string(k));
  for (std::size_t i = 0; i < count; ++i) {
    const Label label = label_from_index(static_cast<int>(i % 2));
    const auto& mu = label == Label::Pristine ? proto.pristine : proto.manipulated;
    const bool burst = rng.uniform() < kSynthBurstRate;
    std::array<double, kFeatureCount> row{};
    for (std::size_t k = 0; k < kFeatureCount; ++k) {
      row[k] = mu[k] + rng.normal();
      if (burst) row[k] += kSynthBurstScale * rng.uniform(0.5, 1.0);
    }
    t.rows.push_back(row);
    t.labels.push_back(label);
    t.ids.push_back(i);
  }
  return t;
}

std::vector<ImageSample> synth_generate(std::size_t count, double class_separation,
                                        std::uint64_t seed) {
  const auto table = synth_features(count, class_separation, seed);
  if (count == 0) return {};
  const auto scaling = fit_min_max(table.rows);
  std::vector<ImageSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(encode_image(table.rows[i], scaling, table.labels[i], table.ids[i]));
  return out;
}

// ---------------------------------------------------------------- archive

namespace {
constexpr std::string_view kDatasetMagic = "FRSHIELD-DS";
constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::uint8_t kUnassigned = 255;

void write_samples(binio::Writer& w, std::span<const ImageSample> samples, std::uint8_t tag) {
  for (const auto& s : samples) {
    w.u8(tag);
    w.u64(s.source_id);
    w.u8(static_cast<std::uint8_t>(s.label));
    w.u64s(std::vector<std::uint64_t>(s.pixels.shape.begin(), s.pixels.shape.end()));
    w.f32s(s.pixels.data);
  }
}

std::vector<std::pair<std::uint8_t, ImageSample>> read_all(const std::filesystem::path& path) {
  auto r = binio::Reader::open(path, kDatasetMagic, kDatasetVersion);
  const auto n = r.u64();
  std::vector<std::pair<std::uint8_t, ImageSample>> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto tag = r.u8();
    ImageSample s;
    s.source_id = r.u64();
    const auto label = r.u8();
    require(label <= 1, ErrorKind::Format, "bad label in dataset archive");
    s.label = static_cast<Label>(label);
    const auto shape = r.u64s();
    s.pixels = Tensor(Shape(shape.begin(), shape.end()), r.f32s());
    out.emplace_back(tag, std::move(s));
  }
  r.expect_end();
  return out;
}
}  // namespace

void save_samples(const std::filesystem::path& path, std::span<const ImageSample> samples) {
  binio::Writer w(kDatasetMagic, kDatasetVersion);
  w.u64(samples.size());
  write_samples(w, samples, kUnassigned);
  w.save(path);
}

std::vector<ImageSample> load_samples(const std::filesystem::path& path) {
  std::vector<ImageSample> out;
  for (auto& [tag, s] : read_all(path)) out.push_back(std::move(s));
  return out;
}

void save_split(const std::filesystem::path& path, const DatasetSplit& split) {
  binio::Writer w(kDatasetMagic, kDatasetVersion);
  w.u64(split.train.size() + split.validation.size() + split.test.size());
  write_samples(w, split.train, 0);
  write_samples(w, split.validation, 1);
  write_samples(w, split.test, 2);
  w.save(path);
}

DatasetSplit load_split(const std::filesystem::path& path) {
  DatasetSplit split;
  for (auto& [tag, s] : read_all(path)) {
    switch (tag) {
      case 0: split.train.push_back(std::move(s)); break;
      case 1: split.validation.push_back(std::move(s)); break;
      case 2: split.test.push_back(std::move(s)); break;
      default: fail(ErrorKind::Format, "dataset archive holds unsplit samples");
    }
  }
  return split;
}

}  // namespace frshield::data
