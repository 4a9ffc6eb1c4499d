#include "dbltr/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "dbltr/rng.hpp"

namespace dbltr {

void ModelConfig::validate() const {
  if (input_dim == 0) throw ValidationError("ModelConfig: input_dim must be >= 1");
  if (num_classes < 2) throw ValidationError("ModelConfig: need at least 2 classes");
  for (std::size_t w : backbone_widths)
    if (w == 0) throw ValidationError("ModelConfig: zero-width backbone layer");
  if (projection_hidden == 0 && embedding_dim() == 0)
    throw ValidationError("ModelConfig: projection head has zero-width hidden layer");
}

std::vector<ModelParams::Param> ModelParams::parameters() const {
  std::vector<Param> out;
  for (const Layer& l : backbone) {
    out.push_back({l.weight, false});
    out.push_back({l.bias, true});
  }
  out.push_back({classifier.weight, false});
  out.push_back({classifier.bias, true});
  out.push_back({proj_hidden.weight, false});
  out.push_back({proj_hidden.bias, true});
  out.push_back({proj_out.weight, false});
  out.push_back({proj_out.bias, true});
  return out;
}

namespace {

ModelParams::Layer clone_layer(const ModelParams::Layer& l) {
  return {Value::leaf(l.weight.shape(), l.weight.data()),
          Value::leaf(l.bias.shape(), l.bias.data())};
}

}  // namespace

ModelParams ModelParams::clone() const {
  ModelParams out;
  out.backbone.reserve(backbone.size());
  for (const Layer& l : backbone) out.backbone.push_back(clone_layer(l));
  out.classifier = clone_layer(classifier);
  out.proj_hidden = clone_layer(proj_hidden);
  out.proj_out = clone_layer(proj_out);
  return out;
}

void ModelParams::check_finite() const {
  for (const Param& p : parameters())
    for (double x : p.value.data())
      if (!std::isfinite(x)) throw NumericError("model parameters became non-finite");
}

namespace {

ModelParams::Layer init_layer(std::size_t out_dim, std::size_t in_dim, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  std::vector<double> w(out_dim * in_dim);
  for (double& x : w) x = rng.uniform(-a, a);
  return {Value::leaf({out_dim, in_dim}, std::move(w)),
          Value::zeros({out_dim})};
}

// y = x W^T + b, rows broadcast over the batch.
Value affine(const ModelParams::Layer& l, const Value& x) {
  const std::size_t batch = x.shape().at(0);
  return add(matmul(x, transpose(l.weight)), broadcast_rows(l.bias, batch));
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams p;
  std::size_t in = cfg.input_dim;
  for (std::size_t w : cfg.backbone_widths) {
    p.backbone.push_back(init_layer(w, in, rng));
    in = w;
  }
  const std::size_t e = cfg.embedding_dim();
  p.classifier = init_layer(cfg.num_classes, e, rng);
  const std::size_t h = cfg.resolved_projection_hidden();
  p.proj_hidden = init_layer(h, e, rng);
  p.proj_out = init_layer(cfg.resolved_projection_dim(), h, rng);
  return p;
}

Value backbone_forward(const ModelParams& params, const Value& x) {
  if (x.rank() != 2)
    throw ValidationError("backbone_forward: expects a [batch, dim] input, got " +
                          shape_str(x.shape()));
  Value h = x;
  for (const auto& layer : params.backbone) h = relu(affine(layer, h));
  return h;
}

Value classifier_forward(const ModelParams& params, const Value& emb) {
  return affine(params.classifier, emb);
}

Value projection_forward(const ModelParams& params, const Value& emb) {
  return affine(params.proj_out, relu(affine(params.proj_hidden, emb)));
}

// --- checkpoint container --------------------------------------------------------
// magic "DBCK" | u32 version | u32 array count | per array:
//   u32 name length | name bytes | u32 ndim | u64 dims[] | f64 data[]

namespace {

constexpr char kMagic[4] = {'D', 'B', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_array(std::ofstream& out, const std::string& name, const Value& v) {
  const auto name_len = static_cast<std::uint32_t>(name.size());
  out.write(reinterpret_cast<const char*>(&name_len), 4);
  out.write(name.data(), name_len);
  const auto ndim = static_cast<std::uint32_t>(v.shape().size());
  out.write(reinterpret_cast<const char*>(&ndim), 4);
  for (std::size_t d : v.shape()) {
    const std::uint64_t dd = d;
    out.write(reinterpret_cast<const char*>(&dd), 8);
  }
  out.write(reinterpret_cast<const char*>(v.data().data()),
            static_cast<std::streamsize>(v.data().size() * sizeof(double)));
}

struct NamedArray {
  Shape shape;
  std::vector<double> data;
};

}  // namespace

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("save_params: cannot open " + path.string());
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), 4);
  std::vector<std::pair<std::string, const Value*>> arrays;
  for (std::size_t i = 0; i < params.backbone.size(); ++i) {
    arrays.emplace_back("backbone." + std::to_string(i) + ".weight",
                        &params.backbone[i].weight);
    arrays.emplace_back("backbone." + std::to_string(i) + ".bias", &params.backbone[i].bias);
  }
  arrays.emplace_back("classifier.weight", &params.classifier.weight);
  arrays.emplace_back("classifier.bias", &params.classifier.bias);
  arrays.emplace_back("projection.hidden.weight", &params.proj_hidden.weight);
  arrays.emplace_back("projection.hidden.bias", &params.proj_hidden.bias);
  arrays.emplace_back("projection.out.weight", &params.proj_out.weight);
  arrays.emplace_back("projection.out.bias", &params.proj_out.bias);
  const auto count = static_cast<std::uint32_t>(arrays.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& [name, v] : arrays) write_array(out, name, *v);
  if (!out) throw ValidationError("save_params: write failed for " + path.string());
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("load_params: cannot open " + path.string());
  std::size_t offset = 0;
  auto read = [&](void* dst, std::size_t n, const char* what) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw ParseError(std::string("checkpoint truncated reading ") + what, offset);
    offset += n;
  };
  char magic[4];
  read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw ParseError("checkpoint has wrong magic", 0);
  std::uint32_t version = 0;
  read(&version, 4, "version");
  if (version != kVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
  std::uint32_t count = 0;
  read(&count, 4, "array count");
  std::map<std::string, NamedArray> arrays;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::uint32_t name_len = 0;
    read(&name_len, 4, "name length");
    std::string name(name_len, '\0');
    read(name.data(), name_len, "name");
    std::uint32_t ndim = 0;
    read(&ndim, 4, "rank");
    NamedArray arr;
    arr.shape.resize(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) {
      std::uint64_t dd = 0;
      read(&dd, 8, "dimension");
      arr.shape[d] = dd;
    }
    arr.data.resize(shape_numel(arr.shape));
    read(arr.data.data(), arr.data.size() * sizeof(double), name.c_str());
    arrays.emplace(std::move(name), std::move(arr));
  }

  auto take = [&arrays](const std::string& name) {
    auto it = arrays.find(name);
    if (it == arrays.end())
      throw ValidationError("load_params: checkpoint is missing array " + name);
    Value v = Value::leaf(it->second.shape, std::move(it->second.data));
    arrays.erase(it);
    return v;
  };
  ModelParams p;
  for (std::size_t i = 0;; ++i) {
    const std::string base = "backbone." + std::to_string(i);
    if (!arrays.count(base + ".weight")) break;
    p.backbone.push_back({take(base + ".weight"), take(base + ".bias")});
  }
  p.classifier = {take("classifier.weight"), take("classifier.bias")};
  p.proj_hidden = {take("projection.hidden.weight"), take("projection.hidden.bias")};
  p.proj_out = {take("projection.out.weight"), take("projection.out.bias")};
  if (!arrays.empty())
    throw ValidationError("load_params: checkpoint has unexpected array " +
                          arrays.begin()->first);
  return p;
}

}  // namespace dbltr
