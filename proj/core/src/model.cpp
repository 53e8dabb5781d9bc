#include "robustaug/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <utility>

#include "robustaug/errors.hpp"
#include "robustaug/rng.hpp"

namespace robustaug {

std::string to_string(ArchKind kind) {
  switch (kind) {
    case ArchKind::Linear: return "linear";
    case ArchKind::Mlp: return "mlp";
    case ArchKind::SmallCnn: return "small_cnn";
  }
  return "unknown";
}

ArchKind parse_arch_kind(const std::string& name) {
  if (name == "linear") return ArchKind::Linear;
  if (name == "mlp") return ArchKind::Mlp;
  if (name == "small_cnn") return ArchKind::SmallCnn;
  throw ValidationError("unknown model kind '" + name + "' (expected linear, mlp or small_cnn)");
}

std::vector<std::size_t> ArchSpec::resolved_widths() const {
  if (!widths.empty()) return widths;
  switch (kind) {
    case ArchKind::Linear: return {};
    case ArchKind::Mlp: return {64};
    case ArchKind::SmallCnn: return {16, 32, 64};
  }
  return {};
}

void ArchSpec::validate() const {
  if (classes < 2) throw ValidationError("model needs at least 2 classes");
  if (channels == 0 || height == 0 || width == 0) throw ValidationError("input extents must be positive");
  const auto w = resolved_widths();
  if (std::any_of(w.begin(), w.end(), [](std::size_t v) { return v == 0; })) {
    throw ValidationError("model widths must be positive");
  }
  if (kind == ArchKind::Linear && !w.empty()) throw ValidationError("linear model takes no widths");
  if (kind == ArchKind::Mlp && w.empty()) throw ValidationError("mlp needs at least one hidden width");
  if (kind == ArchKind::SmallCnn) {
    if (w.size() != 3) throw ValidationError("small_cnn widths are {conv1, conv2, dense}");
    if (height % 2 != 0 || width % 2 != 0) throw ValidationError("small_cnn needs even image extents");
  }
}

std::string ArchSpec::describe() const {
  std::ostringstream os;
  os << "kind=" << to_string(kind) << " input=" << channels << "x" << height << "x" << width
     << " classes=" << classes << " widths=";
  const auto w = resolved_widths();
  for (std::size_t i = 0; i < w.size(); ++i) os << (i ? "," : "") << w[i];
  return os.str();
}

ArchSpec ArchSpec::parse(const std::string& text) {
  ArchSpec spec;
  std::istringstream is(text);
  std::string token;
  bool seen_kind = false, seen_input = false, seen_classes = false;
  while (is >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw FormatError("bad architecture token '" + token + "'");
    const std::string key = token.substr(0, eq), value = token.substr(eq + 1);
    try {
      if (key == "kind") {
        spec.kind = parse_arch_kind(value);
        seen_kind = true;
      } else if (key == "input") {
        char x1 = 0, x2 = 0;
        std::istringstream vs(value);
        vs >> spec.channels >> x1 >> spec.height >> x2 >> spec.width;
        if (!vs || x1 != 'x' || x2 != 'x') throw FormatError("bad input extents '" + value + "'");
        seen_input = true;
      } else if (key == "classes") {
        spec.classes = std::stoul(value);
        seen_classes = true;
      } else if (key == "widths") {
        spec.widths.clear();
        std::istringstream vs(value);
        std::string part;
        while (std::getline(vs, part, ',')) {
          if (!part.empty()) spec.widths.push_back(std::stoul(part));
        }
      } else {
        throw FormatError("unknown architecture key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw FormatError("bad architecture value '" + token + "'");
    }
  }
  if (!seen_kind || !seen_input || !seen_classes) throw FormatError("incomplete architecture '" + text + "'");
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------- params

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.tensor.size();
  return n;
}

Tensor& ModelParams::at(const std::string& name) {
  for (auto& e : entries) {
    if (e.name == name) return e.tensor;
  }
  throw ValidationError("no parameter named '" + name + "'");
}

const Tensor& ModelParams::at(const std::string& name) const {
  return const_cast<ModelParams*>(this)->at(name);
}

bool ModelParams::same_layout(const ModelParams& other) const {
  if (entries.size() != other.entries.size()) return false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].name != other.entries[i].name || entries[i].tensor.shape != other.entries[i].tensor.shape) {
      return false;
    }
  }
  return true;
}

void ModelParams::zero_grad() {
  for (auto& e : entries) e.tensor.zero_grad();
}

void ModelParams::set_requires_grad(bool on) {
  for (auto& e : entries) e.tensor.set_requires_grad(on);
}

namespace {

NamedTensor he_normal(const std::string& name, Shape shape, std::size_t fan_in, std::uint64_t seed) {
  Tensor t(std::move(shape), 0.0);
  RngStream rng(seed, "init/" + name);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data) v = stddev * rng.normal();
  return {name, std::move(t)};
}

NamedTensor zeros(const std::string& name, Shape shape) { return {name, Tensor(std::move(shape), 0.0)}; }

}  // namespace

ModelParams init_model(const ArchSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto w = spec.resolved_widths();
  ModelParams p;
  const std::size_t in = spec.input_size();
  switch (spec.kind) {
    case ArchKind::Linear:
      p.entries.push_back(he_normal("dense.weight", {in, spec.classes}, in, seed));
      p.entries.push_back(zeros("dense.bias", {spec.classes}));
      break;
    case ArchKind::Mlp: {
      std::size_t prev = in;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const std::string base = "fc" + std::to_string(i + 1);
        p.entries.push_back(he_normal(base + ".weight", {prev, w[i]}, prev, seed));
        p.entries.push_back(zeros(base + ".bias", {w[i]}));
        prev = w[i];
      }
      p.entries.push_back(he_normal("out.weight", {prev, spec.classes}, prev, seed));
      p.entries.push_back(zeros("out.bias", {spec.classes}));
      break;
    }
    case ArchKind::SmallCnn: {
      const std::size_t flat = w[1] * (spec.height / 2) * (spec.width / 2);
      p.entries.push_back(he_normal("conv1.weight", {w[0], spec.channels, 3, 3}, spec.channels * 9, seed));
      p.entries.push_back(zeros("conv1.bias", {w[0]}));
      p.entries.push_back(he_normal("conv2.weight", {w[1], w[0], 4, 4}, w[0] * 16, seed));
      p.entries.push_back(zeros("conv2.bias", {w[1]}));
      p.entries.push_back(he_normal("fc1.weight", {flat, w[2]}, flat, seed));
      p.entries.push_back(zeros("fc1.bias", {w[2]}));
      p.entries.push_back(he_normal("fc2.weight", {w[2], spec.classes}, w[2], seed));
      p.entries.push_back(zeros("fc2.bias", {spec.classes}));
      break;
    }
  }
  return p;
}

// ---------------------------------------------------------------- forward

namespace {

template <typename Params, typename Bind>
Var build_forward(Graph& g, const ArchSpec& spec, Params& params, Var images, Bind bind) {
  const Shape s = g.shape(images);
  if (s.size() != 4 || s[1] != spec.channels || s[2] != spec.height || s[3] != spec.width) {
    throw DimensionError("model expects images [B," + std::to_string(spec.channels) + "," +
                         std::to_string(spec.height) + "," + std::to_string(spec.width) + "], got " + to_string(s));
  }
  const std::size_t batch = s[0];
  const auto w = spec.resolved_widths();
  switch (spec.kind) {
    case ArchKind::Linear: {
      Var x = g.reshape(images, {batch, spec.input_size()});
      return g.affine(x, bind(params.at("dense.weight")), bind(params.at("dense.bias")));
    }
    case ArchKind::Mlp: {
      Var h = g.reshape(images, {batch, spec.input_size()});
      for (std::size_t i = 0; i < w.size(); ++i) {
        const std::string base = "fc" + std::to_string(i + 1);
        h = g.silu(g.affine(h, bind(params.at(base + ".weight")), bind(params.at(base + ".bias"))));
      }
      return g.affine(h, bind(params.at("out.weight")), bind(params.at("out.bias")));
    }
    case ArchKind::SmallCnn: {
      Var h = g.silu(g.conv2d(images, bind(params.at("conv1.weight")), bind(params.at("conv1.bias")), 1, 1));
      h = g.silu(g.conv2d(h, bind(params.at("conv2.weight")), bind(params.at("conv2.bias")), 2, 1));
      h = g.reshape(h, {batch, w[1] * (spec.height / 2) * (spec.width / 2)});
      h = g.silu(g.affine(h, bind(params.at("fc1.weight")), bind(params.at("fc1.bias"))));
      return g.affine(h, bind(params.at("fc2.weight")), bind(params.at("fc2.bias")));
    }
  }
  throw ValidationError("unknown architecture");
}

}  // namespace

Var forward(Graph& g, const ArchSpec& spec, ModelParams& params, Var images, bool trainable) {
  if (trainable) {
    return build_forward(g, spec, params, images, [&g](Tensor& t) { return g.leaf(t); });
  }
  return forward(g, spec, std::as_const(params), images);
}

Var forward(Graph& g, const ArchSpec& spec, const ModelParams& params, Var images) {
  return build_forward(g, spec, params, images, [&g](const Tensor& t) { return g.constant_ref(t); });
}

Tensor predict(const ArchSpec& spec, const ModelParams& params, const Tensor& images) {
  Graph g;
  Var x = g.constant_ref(images);
  return g.value(forward(g, spec, params, x));
}

Model::Model(ArchSpec spec, ModelParams params) : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  if (!params_.same_layout(init_model(spec_, 0))) {
    throw ValidationError("parameters do not match architecture " + spec_.describe());
  }
}

Var Model::logits(Graph& g, Var images) const { return forward(g, spec_, params_, images); }

Ensemble::Ensemble(std::vector<const Classifier*> members) : members_(std::move(members)) {
  if (members_.empty()) throw ValidationError("ensemble needs at least one model");
  for (const auto* m : members_) {
    if (m->num_classes() != members_.front()->num_classes()) {
      throw ValidationError("ensemble members disagree on class count");
    }
    if (m->image_shape() != members_.front()->image_shape()) {
      throw ValidationError("ensemble members disagree on input shape");
    }
  }
}

std::size_t Ensemble::num_classes() const { return members_.front()->num_classes(); }
Shape Ensemble::image_shape() const { return members_.front()->image_shape(); }

Var Ensemble::logits(Graph& g, Var images) const {
  if (members_.size() == 1) return members_.front()->logits(g, images);
  std::vector<Var> logp;
  for (const auto* m : members_) logp.push_back(g.log_softmax(m->logits(g, images)));
  // log mean_m exp(logp_m), shifted by the elementwise max for stability.
  Tensor shift = g.value(logp.front());
  for (std::size_t m = 1; m < logp.size(); ++m) {
    const Tensor& v = g.value(logp[m]);
    for (std::size_t i = 0; i < shift.size(); ++i) shift.data[i] = std::max(shift.data[i], v.data[i]);
  }
  Var c = g.constant(shift);
  Var acc = g.exp(g.sub(logp.front(), c));
  for (std::size_t m = 1; m < logp.size(); ++m) acc = g.add(acc, g.exp(g.sub(logp[m], c)));
  return g.add_scalar(g.add(g.log(acc), c), -std::log(static_cast<double>(members_.size())));
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr const char* kCheckpointMagic = "robustaug-checkpoint v1 ";

void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
std::uint64_t get_uint(std::istream& is, int bytes, const std::filesystem::path& path) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == EOF) throw FormatError("truncated checkpoint " + path.string());
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ArchSpec& spec, const ModelParams& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os << kCheckpointMagic << spec.describe() << "\n";
  for (const auto& e : params.entries) {
    put_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(os, static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto extent : e.tensor.shape) put_u64(os, extent);
    for (double v : e.tensor.data) put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

std::pair<ArchSpec, ModelParams> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::string header;
  std::getline(is, header);
  const std::string magic = kCheckpointMagic;
  if (header.rfind(magic, 0) != 0) throw FormatError("not a robustaug checkpoint: " + path.string());
  ArchSpec spec = ArchSpec::parse(header.substr(magic.size()));
  ModelParams expected = init_model(spec, 0);
  ModelParams params;
  for (const auto& want : expected.entries) {
    const auto name_len = get_uint(is, 4, path);
    if (name_len > 4096) throw FormatError("corrupt parameter name in " + path.string());
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is || name != want.name) throw FormatError("unexpected parameter '" + name + "' in " + path.string());
    const auto rank = get_uint(is, 4, path);
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(get_uint(is, 8, path));
    if (shape != want.tensor.shape) {
      throw FormatError("parameter '" + name + "' has shape " + to_string(shape) + ", expected " +
                        to_string(want.tensor.shape));
    }
    Tensor t(shape, 0.0);
    for (auto& v : t.data) v = std::bit_cast<double>(get_uint(is, 8, path));
    params.entries.push_back({name, std::move(t)});
  }
  if (is.peek() != EOF) throw FormatError("trailing bytes in checkpoint " + path.string());
  return {spec, params};
}

}  // namespace robustaug
