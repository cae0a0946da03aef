#include "vcor/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace vcor {
namespace {

constexpr char kVolumeMagic[] = "vcor-volume 1";
constexpr char kCheckpointMagic[8] = {'V', 'C', 'O', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kMetricsHeader[] = "hop,tre_mean_mm,tre_std_mm,dsc,ncc,mse,mi,pct_neg_jac,uncertainty";

template <typename T>
T to_little(T x) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(x);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return x;
}

template <typename T>
void put(std::string& out, T x) {
  x = to_little(x);
  char buf[sizeof(T)];
  std::memcpy(buf, &x, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos, const fs::path& path) {
  if (pos + sizeof(T) > in.size()) throw IoError("truncated file: " + path.string());
  T x;
  std::memcpy(&x, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return to_little(x);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& text, const std::string& context) {
  const std::string t = trim(text);
  if (t == "nan") return HopMetrics::kMissing;
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw InputError(context + ": cannot parse number '" + t + "'");
  return x;
}

long parse_int(const std::string& text, const std::string& context) {
  const std::string t = trim(text);
  long x = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw InputError(context + ": cannot parse integer '" + t + "'");
  return x;
}

void write_payload(const fs::path& header, const Grid3& grid, int components, const std::vector<float>& data) {
  const fs::path raw = fs::path(header).replace_extension(".raw");
  std::ostringstream h;
  h << kVolumeMagic << "\n";
  h << "dims: " << grid.dims[0] << " " << grid.dims[1] << " " << grid.dims[2] << "\n";
  h << "spacing: " << format_number(grid.spacing[0]) << " " << format_number(grid.spacing[1]) << " "
    << format_number(grid.spacing[2]) << "\n";
  h << "dtype: float32-le\n";
  h << "components: " << components << "\n";
  h << "order: x-fastest\n";
  h << "data: " << raw.filename().string() << "\n";
  std::string bytes;
  bytes.reserve(data.size() * 4);
  for (float x : data) put(bytes, x);
  write_text(raw, bytes);
  write_text(header, h.str());
}

std::vector<float> read_payload(const fs::path& header, const VolumeHeader& hdr, int components) {
  if (hdr.components != components)
    throw InputError(header.string() + ": expected " + std::to_string(components) + " component(s), found " +
                     std::to_string(hdr.components));
  const fs::path raw = header.parent_path() / hdr.data_file;
  const std::string bytes = read_text(raw);
  const std::size_t count = std::size_t(hdr.grid.size()) * components;
  if (bytes.size() != count * 4)
    throw IoError(raw.string() + ": payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                  std::to_string(count * 4));
  std::vector<float> out(count);
  std::size_t pos = 0;
  for (auto& x : out) x = take<float>(bytes, pos, raw);
  return out;
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

}  // namespace

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw IoError("cannot format number");
  return std::string(buf, ptr);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(text.data(), std::streamsize(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

VolumeHeader read_volume_header(const fs::path& header) {
  std::istringstream in(read_text(header));
  std::string line;
  if (!std::getline(in, line) || trim(line) != kVolumeMagic)
    throw InputError(header.string() + ": not a volume header");
  VolumeHeader h;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw InputError(header.string() + ": malformed line '" + line + "'");
    const std::string key = trim(line.substr(0, colon));
    const std::string value = trim(line.substr(colon + 1));
    seen.insert(key);
    std::istringstream v(value);
    if (key == "dims") {
      if (!(v >> h.grid.dims[0] >> h.grid.dims[1] >> h.grid.dims[2]))
        throw InputError(header.string() + ": bad dims");
    } else if (key == "spacing") {
      std::string a, b, c;
      v >> a >> b >> c;
      h.grid.spacing = {parse_double(a, header.string()), parse_double(b, header.string()),
                        parse_double(c, header.string())};
    } else if (key == "dtype") {
      if (value != "float32-le") throw InputError(header.string() + ": unsupported dtype '" + value + "'");
    } else if (key == "components") {
      h.components = int(parse_int(value, header.string()));
    } else if (key == "order") {
      if (value != "x-fastest") throw InputError(header.string() + ": unsupported order '" + value + "'");
    } else if (key == "data") {
      h.data_file = value;
    } else {
      throw InputError(header.string() + ": unknown key '" + key + "'");
    }
  }
  for (const char* k : {"dims", "spacing", "dtype", "components", "order", "data"})
    if (!seen.count(k)) throw InputError(header.string() + ": missing '" + k + "'");
  h.grid.validate();
  if (h.components != 1 && h.components != 3) throw InputError(header.string() + ": components must be 1 or 3");
  return h;
}

void write_volume(const fs::path& header, const Volume3& vol) {
  std::vector<float> data(vol.values.size());
  for (Index i = 0; i < vol.values.size(); ++i) data[i] = float(vol.values[i]);
  write_payload(header, vol.grid, 1, data);
}

Volume3 read_volume(const fs::path& header) {
  const auto h = read_volume_header(header);
  const auto data = read_payload(header, h, 1);
  Volume3 v(h.grid);
  for (Index i = 0; i < v.values.size(); ++i) v.values[i] = data[i];
  return v;
}

void write_field(const fs::path& header, const DisplacementField& field) {
  std::vector<float> data(field.vectors.size());
  for (Index i = 0; i < field.vectors.size(); ++i) data[i] = float(field.vectors.data()[i]);
  write_payload(header, field.grid, 3, data);
}

DisplacementField read_field(const fs::path& header) {
  const auto h = read_volume_header(header);
  const auto data = read_payload(header, h, 3);
  DisplacementField f(h.grid);
  for (Index i = 0; i < f.vectors.size(); ++i) f.vectors.data()[i] = data[i];
  return f;
}

void write_mask(const fs::path& header, const BinaryMask& mask) {
  std::vector<float> data(mask.values.size());
  for (Index i = 0; i < mask.values.size(); ++i) data[i] = mask.values[i] ? 1.0f : 0.0f;
  write_payload(header, mask.grid, 1, data);
}

BinaryMask read_mask(const fs::path& header) { return threshold_mask(read_volume(header)); }

Volume3 quantize(const Volume3& vol) {
  Volume3 out = vol;
  for (Index i = 0; i < out.values.size(); ++i) out.values[i] = float(out.values[i]);
  return out;
}

DisplacementField quantize(const DisplacementField& field) {
  DisplacementField out = field;
  for (Index i = 0; i < out.vectors.size(); ++i) out.vectors.data()[i] = float(out.vectors.data()[i]);
  return out;
}

void write_landmarks(const fs::path& path, const LandmarkSet& set) {
  set.validate();
  std::string out = "id,x,y,z\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::string id = set.labels.empty() ? std::to_string(i) : set.labels[i];
    if (id.find_first_of(",\n\r") != std::string::npos) throw InputError("landmark id contains a separator: " + id);
    const auto& p = set.points[i];
    out += id + "," + format_number(p[0]) + "," + format_number(p[1]) + "," + format_number(p[2]) + "\n";
  }
  write_text(path, out);
}

LandmarkSet read_landmarks(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || trim(line) != "id,x,y,z")
    throw InputError(path.string() + ": expected header 'id,x,y,z'");
  LandmarkSet set;
  std::set<std::string> ids;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cols = split(trim(line), ',');
    const std::string where = path.string() + " row " + std::to_string(row);
    if (cols.size() != 4) throw InputError(where + ": expected 4 columns");
    const std::string id = trim(cols[0]);
    if (!ids.insert(id).second) throw InputError(where + ": duplicate id '" + id + "'");
    set.labels.push_back(id);
    set.points.emplace_back(parse_double(cols[1], where), parse_double(cols[2], where), parse_double(cols[3], where));
  }
  set.validate();
  return set;
}

void save_checkpoint(const fs::path& path, const ModelParams& params) {
  json header;
  header["format"] = "vcor-checkpoint";
  header["arch"] = to_json(params.arch);
  header["seed"] = params.seed;
  json list = json::array();
  for (const auto& t : tensors(params)) list.push_back({{"name", t.name}, {"size", t.size}});
  header["tensors"] = list;
  const std::string text = header.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put(out, kCheckpointVersion);
  put(out, std::uint64_t(text.size()));
  out += text;
  for (const auto& t : tensors(params))
    for (Index i = 0; i < t.size; ++i) put(out, t.data[i]);
  write_text(path, out);
}

ModelParams load_checkpoint(const fs::path& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() < sizeof(kCheckpointMagic) || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw InputError(path.string() + ": not a checkpoint");
  std::size_t pos = 8;
  const auto version = take<std::uint32_t>(bytes, pos, path);
  if (version != kCheckpointVersion) throw InputError(path.string() + ": unsupported checkpoint version");
  const auto len = take<std::uint64_t>(bytes, pos, path);
  if (pos + len > bytes.size()) throw IoError("truncated file: " + path.string());
  json header;
  try {
    header = json::parse(bytes.substr(pos, len));
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": bad checkpoint header: " + e.what());
  }
  pos += len;

  ModelParams params = init_params(arch_from_json(header.at("arch")), header.at("seed").get<std::uint64_t>());
  auto refs = tensors(params);
  const auto& list = header.at("tensors");
  if (list.size() != refs.size()) throw InputError(path.string() + ": tensor count does not match architecture");
  for (std::size_t t = 0; t < refs.size(); ++t) {
    if (list[t].at("name").get<std::string>() != refs[t].name || list[t].at("size").get<Index>() != refs[t].size)
      throw InputError(path.string() + ": tensor '" + refs[t].name + "' does not match architecture");
    for (Index i = 0; i < refs[t].size; ++i) refs[t].data[i] = take<double>(bytes, pos, path);
  }
  if (pos != bytes.size()) throw InputError(path.string() + ": trailing bytes after tensors");
  return params;
}

void write_metrics_csv(const fs::path& path, const std::vector<HopMetrics>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.hop);
    for (double x : {r.tre_mean_mm, r.tre_std_mm, r.dsc, r.ncc, r.mse, r.mi, r.pct_neg_jac, r.uncertainty})
      out += "," + format_number(x);
    out += "\n";
  }
  write_text(path, out);
}

std::vector<HopMetrics> read_metrics_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || trim(line) != kMetricsHeader)
    throw InputError(path.string() + ": unexpected metrics header");
  std::vector<HopMetrics> rows;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto c = split(trim(line), ',');
    const std::string where = path.string() + " row " + std::to_string(row);
    if (c.size() != 9) throw InputError(where + ": expected 9 columns");
    HopMetrics m;
    m.hop = int(parse_int(c[0], where));
    m.tre_mean_mm = parse_double(c[1], where);
    m.tre_std_mm = parse_double(c[2], where);
    m.dsc = parse_double(c[3], where);
    m.ncc = parse_double(c[4], where);
    m.mse = parse_double(c[5], where);
    m.mi = parse_double(c[6], where);
    m.pct_neg_jac = parse_double(c[7], where);
    m.uncertainty = parse_double(c[8], where);
    rows.push_back(m);
  }
  return rows;
}

void write_history_csv(const fs::path& path, const RunHistory& history) {
  std::string out =
      "epoch,learning_rate,total,ncc,mse,reg,similarity,regularization,final_hop_total,grad_norm\n";
  for (const auto& e : history.epochs) {
    out += std::to_string(e.epoch);
    for (double x : {e.learning_rate, e.loss.total, e.loss.ncc, e.loss.mse, e.loss.reg, e.loss.similarity,
                     e.loss.regularization, e.final_hop.total, e.grad_norm})
      out += "," + format_number(x);
    out += "\n";
  }
  write_text(path, out);
}

std::vector<std::string> write_case(const fs::path& dir, const PhantomCase& pc) {
  write_volume(dir / CaseFiles::kReference, pc.reference);
  write_volume(dir / CaseFiles::kSource, pc.source);
  write_field(dir / CaseFiles::kField, pc.gt_field);
  write_mask(dir / CaseFiles::kMaskRef, pc.mask_ref);
  write_mask(dir / CaseFiles::kMaskSrc, pc.mask_src);
  write_landmarks(dir / CaseFiles::kLandmarksRef, pc.landmarks_ref);
  write_landmarks(dir / CaseFiles::kLandmarksSrc, pc.landmarks_src);
  json meta;
  meta["seed"] = pc.seed;
  write_text(dir / "case.json", meta.dump(2) + "\n");
  return {"case.json",        "gt_field.raw", "gt_field.vhdr",     "landmarks_ref.csv", "landmarks_src.csv",
          "mask_ref.raw",     "mask_ref.vhdr", "mask_src.raw",     "mask_src.vhdr",     "reference.raw",
          "reference.vhdr",   "source.raw",    "source.vhdr"};
}

PhantomCase read_case(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("case directory not found: " + dir.string());
  PhantomCase pc;
  pc.reference = read_volume(dir / CaseFiles::kReference);
  pc.source = read_volume(dir / CaseFiles::kSource);
  pc.gt_field = read_field(dir / CaseFiles::kField);
  pc.mask_ref = read_mask(dir / CaseFiles::kMaskRef);
  pc.mask_src = read_mask(dir / CaseFiles::kMaskSrc);
  pc.landmarks_ref = read_landmarks(dir / CaseFiles::kLandmarksRef);
  pc.landmarks_src = read_landmarks(dir / CaseFiles::kLandmarksSrc);
  if (fs::exists(dir / "case.json")) pc.seed = read_json(dir / "case.json").value("seed", std::uint64_t(0));
  if (!(pc.source.grid == pc.reference.grid) || !(pc.gt_field.grid == pc.reference.grid))
    throw InputError(dir.string() + ": case volumes live on different grids");
  return pc;
}

std::vector<PhantomCase> read_cohort(const fs::path& cohort_dir) {
  const fs::path manifest = cohort_dir / "manifest.json";
  if (!fs::exists(manifest)) throw IoError("cohort manifest not found: " + manifest.string());
  const json m = read_json(manifest);
  std::vector<PhantomCase> cases;
  for (const auto& c : m.at("cases")) cases.push_back(read_case(cohort_dir / c.at("dir").get<std::string>()));
  if (cases.empty()) throw InputError(manifest.string() + ": no cases listed");
  return cases;
}

json to_json(const ArchConfig& a) {
  return {{"depth", a.depth},
          {"channels", a.channels},
          {"base_channels", a.base_channels},
          {"heads", a.heads},
          {"hops", a.hops},
          {"share_hop_attention", a.share_hop_attention},
          {"share_encoder", a.share_encoder},
          {"attention_residual", a.attention_residual},
          {"positional", a.positional == PositionalEncoding::Sinusoidal ? "sinusoidal" : "none"}};
}

ArchConfig arch_from_json(const json& j) {
  check_keys(j,
             {"depth", "channels", "base_channels", "heads", "hops", "share_hop_attention", "share_encoder", "attention_residual",
              "positional"},
             "arch");
  ArchConfig a;
  get(j, "depth", a.depth);
  get(j, "channels", a.channels);
  get(j, "base_channels", a.base_channels);
  get(j, "heads", a.heads);
  get(j, "hops", a.hops);
  get(j, "share_hop_attention", a.share_hop_attention);
  get(j, "share_encoder", a.share_encoder);
  get(j, "attention_residual", a.attention_residual);
  std::string pos = "none";
  get(j, "positional", pos);
  if (pos == "none") {
    a.positional = PositionalEncoding::None;
  } else if (pos == "sinusoidal") {
    a.positional = PositionalEncoding::Sinusoidal;
  } else {
    throw ConfigError("arch.positional must be 'none' or 'sinusoidal'");
  }
  a.validate();
  return a;
}

json to_json(const LossWeights& w) {
  return {{"beta", w.beta},
          {"lambda", w.lambda},
          {"ncc_window", w.ncc_window},
          {"per_hop_supervision", w.per_hop_supervision},
          {"hop_weights", w.hop_weights}};
}

LossWeights loss_from_json(const json& j) {
  check_keys(j, {"beta", "lambda", "ncc_window", "per_hop_supervision", "hop_weights"}, "loss");
  LossWeights w;
  get(j, "beta", w.beta);
  get(j, "lambda", w.lambda);
  get(j, "ncc_window", w.ncc_window);
  get(j, "per_hop_supervision", w.per_hop_supervision);
  get(j, "hop_weights", w.hop_weights);
  w.validate();
  return w;
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"lr_decay", c.lr_decay},
          {"lr_period", c.lr_period},
          {"batch_size", c.batch_size},
          {"hops", c.hops},
          {"seed", c.seed},
          {"loss", to_json(c.loss)},
          {"arch", to_json(c.arch)},
          {"init", {{"zero_flow", c.init.zero_flow}, {"flow_scale", c.init.flow_scale}}},
          {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
          {"clip_gradients", c.clip_gradients},
          {"clip_norm", c.clip_norm},
          {"eval_every", c.eval_every},
          {"checkpoint_every", c.checkpoint_every},
          {"augment_flips", c.augment_flips},
          {"augment_resample", c.augment_resample},
          {"augment_amplitude", c.augment_amplitude},
          {"augment_smoothness", c.augment_smoothness}};
}

TrainConfig train_config_from_json(const json& j) {
  check_keys(j,
             {"epochs", "learning_rate", "lr_decay", "lr_period", "batch_size", "hops", "seed", "loss", "arch", "init",
              "adam", "clip_gradients", "clip_norm", "eval_every", "checkpoint_every", "augment_flips",
              "augment_resample", "augment_amplitude", "augment_smoothness"},
             "train config");
  TrainConfig c;
  get(j, "epochs", c.epochs);
  get(j, "learning_rate", c.learning_rate);
  get(j, "lr_decay", c.lr_decay);
  get(j, "lr_period", c.lr_period);
  get(j, "batch_size", c.batch_size);
  get(j, "hops", c.hops);
  get(j, "seed", c.seed);
  if (j.contains("loss")) c.loss = loss_from_json(j.at("loss"));
  if (j.contains("arch")) c.arch = arch_from_json(j.at("arch"));
  if (j.contains("init")) {
    check_keys(j.at("init"), {"zero_flow", "flow_scale"}, "init");
    get(j.at("init"), "zero_flow", c.init.zero_flow);
    get(j.at("init"), "flow_scale", c.init.flow_scale);
  }
  if (j.contains("adam")) {
    check_keys(j.at("adam"), {"beta1", "beta2", "epsilon"}, "adam");
    get(j.at("adam"), "beta1", c.adam.beta1);
    get(j.at("adam"), "beta2", c.adam.beta2);
    get(j.at("adam"), "epsilon", c.adam.epsilon);
  }
  get(j, "clip_gradients", c.clip_gradients);
  get(j, "clip_norm", c.clip_norm);
  get(j, "eval_every", c.eval_every);
  get(j, "checkpoint_every", c.checkpoint_every);
  get(j, "augment_flips", c.augment_flips);
  get(j, "augment_resample", c.augment_resample);
  get(j, "augment_amplitude", c.augment_amplitude);
  get(j, "augment_smoothness", c.augment_smoothness);
  c.arch.hops = c.hops;
  c.validate();
  return c;
}

json to_json(const CohortConfig& c) {
  return {{"cases", c.cases},
          {"dims", c.grid.dims},
          {"spacing", c.grid.spacing},
          {"amplitudes", c.amplitudes},
          {"smoothness", c.smoothness},
          {"landmarks", c.landmarks},
          {"seed", c.seed}};
}

CohortConfig cohort_config_from_json(const json& j) {
  check_keys(j, {"cases", "dims", "spacing", "amplitudes", "smoothness", "landmarks", "seed"}, "cohort config");
  CohortConfig c;
  get(j, "cases", c.cases);
  get(j, "dims", c.grid.dims);
  get(j, "spacing", c.grid.spacing);
  get(j, "amplitudes", c.amplitudes);
  get(j, "smoothness", c.smoothness);
  get(j, "landmarks", c.landmarks);
  get(j, "seed", c.seed);
  return c;
}

json to_json(const WeightScheme& s) {
  json conf, unc, bounds;
  for (Metric m : kAllMetrics) {
    const int i = static_cast<int>(m);
    conf[metric_name(m)] = s.confidence[i];
    unc[metric_name(m)] = s.uncertainty[i];
    bounds[metric_name(m)] = {s.bounds[i].min, s.bounds[i].max};
  }
  return {{"mode", mode_name(s.mode)}, {"confidence", conf}, {"uncertainty", unc}, {"bounds", bounds}};
}

WeightScheme weight_scheme_from_json(const json& j) {
  check_keys(j, {"mode", "confidence", "uncertainty", "bounds"}, "weight scheme");
  std::string mode = "constant";
  get(j, "mode", mode);
  WeightScheme s;
  if (mode == "constant") {
    s = WeightScheme::constant();
  } else if (mode == "empirical") {
    s = WeightScheme::empirical();
  } else if (mode == "empirical_brain") {
    s = WeightScheme::empirical_brain();
  } else {
    throw ConfigError("weight scheme mode must be 'constant', 'empirical' or 'empirical_brain'");
  }
  // Explicit weights are partial: unlisted metrics share the remainder.
  const auto partial = [&](const char* key, MetricWeights& w) {
    if (!j.contains(key)) return;
    std::vector<std::pair<Metric, double>> given;
    for (const auto& [name, v] : j.at(key).items()) given.emplace_back(parse_metric(name), v.get<double>());
    w = complete_weights(given);
  };
  partial("confidence", s.confidence);
  partial("uncertainty", s.uncertainty);
  if (j.contains("bounds"))
    for (const auto& [name, v] : j.at("bounds").items()) {
      if (!v.is_array() || v.size() != 2) throw ConfigError("bounds." + name + " must be [min, max]");
      s.bounds[static_cast<int>(parse_metric(name))] = {v[0].get<double>(), v[1].get<double>()};
    }
  s.validate();
  return s;
}

json to_json(const BoundFit& f) {
  return {{"alpha", f.alpha},
          {"eps_min", number_or_null(f.eps_min)},
          {"kappa_sq", number_or_null(f.kappa_sq)},
          {"kappa", number_or_null(f.kappa)},
          {"certified_confidence", f.certified_confidence},
          {"certified_uncertainty", f.certified_uncertainty},
          {"confidence_violations", f.confidence_violations},
          {"uncertainty_violations", f.uncertainty_violations},
          {"confidence_envelope", f.confidence_envelope},
          {"uncertainty_envelope", f.uncertainty_envelope}};
}

json to_json(const ReliabilitySeries& s) {
  json hops = json::array();
  for (std::size_t i = 0; i < s.confidence.size(); ++i) hops.push_back(s.first_hop + int(i));
  return {{"hops", hops},
          {"similarity", s.similarity},
          {"confidence", s.confidence},
          {"uncertainty", s.uncertainty},
          {"members", s.members},
          {"sigma", s.sigma}};
}

}  // namespace vcor
