#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sva/cells.hpp"
#include "sva/io.hpp"

namespace sva {

using nlohmann::json;

namespace {

json flat(const Matrix& m) { return json(m.data()); }

Matrix unflat(const json& j, std::size_t rows, std::size_t cols, const std::string& name) {
  if (!j.is_array() || j.size() != rows * cols) {
    throw std::runtime_error("checkpoint: parameter '" + name + "' should hold " + std::to_string(rows * cols) +
                             " values");
  }
  return Matrix(rows, cols, j.get<std::vector<real>>());
}

std::string layer_key(std::size_t l, const std::string& name) { return "layer" + std::to_string(l) + "." + name; }

}  // namespace

std::string checkpoint_to_json(const StackedModel& model, const std::vector<std::string>& vocab) {
  json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["kind"] = std::string(to_string(model.kind));
  j["objective"] = std::string(to_string(model.head));
  j["sizes"] = {{"vocab", model.sizes.vocab},
                {"embed", model.sizes.embed},
                {"hidden", model.sizes.hidden},
                {"layers", model.sizes.layers}};
  j["seed"] = model.seed;
  j["dropout"] = model.dropout;
  j["excitatory_fraction"] = model.excitatory_fraction;

  json params = json::object();
  params["embedding"] = flat(model.embedding.value);
  json alphas = json::array();
  json dales = json::array();
  const auto names = param_names(model.kind);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const CellParams& cp = model.layers[l];
    for (std::size_t k = 0; k < cp.p.size(); ++k) {
      if (model.kind == CellKind::DRNN && k == slot::kA) continue;
      params[layer_key(l, names[k])] = flat(cp.p[k].value);
    }
    if (model.kind == CellKind::DRNN) {
      alphas.push_back(cp.p[slot::kA].value[0]);
      dales.push_back(cp.dale);
    }
  }
  params["output"] = flat(model.output.value);
  params["output_bias"] = flat(model.output_bias.value);
  j["params"] = std::move(params);
  j["a"] = std::move(alphas);
  j["dale_diagonal"] = std::move(dales);
  j["vocab"] = vocab;
  return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw std::runtime_error("checkpoint: unsupported format_version " + j.at("format_version").dump());
    }
    Checkpoint ck;
    StackedModel& m = ck.model;
    m.kind = parse_cell_kind(j.at("kind").get<std::string>());
    m.head = parse_head(j.at("objective").get<std::string>());
    const json& s = j.at("sizes");
    m.sizes = {s.at("vocab").get<std::size_t>(), s.at("embed").get<std::size_t>(), s.at("hidden").get<std::size_t>(),
               s.at("layers").get<std::size_t>()};
    m.seed = j.at("seed").get<std::uint64_t>();
    m.dropout = j.at("dropout").get<real>();
    m.excitatory_fraction = j.at("excitatory_fraction").get<real>();
    const json& params = j.at("params");
    const auto names = param_names(m.kind);
    m.embedding = Parameter(unflat(params.at("embedding"), m.sizes.vocab, m.sizes.embed, "embedding"));
    for (std::size_t l = 0; l < m.sizes.layers; ++l) {
      CellParams cp = make_cell_params(m.kind, m.sizes.hidden, l == 0 ? m.sizes.embed : m.sizes.hidden);
      for (std::size_t k = 0; k < cp.p.size(); ++k) {
        if (m.kind == CellKind::DRNN && k == slot::kA) {
          cp.p[k] = Parameter(Matrix(1, 1, j.at("a").at(l).get<real>()));
          continue;
        }
        const std::string key = layer_key(l, names[k]);
        const Matrix& shape = cp.p[k].value;
        cp.p[k] = Parameter(unflat(params.at(key), shape.rows(), shape.cols(), key));
      }
      if (m.kind == CellKind::DRNN) {
        cp.dale = j.at("dale_diagonal").at(l).get<std::vector<real>>();
        if (cp.dale.size() != m.sizes.hidden) throw std::runtime_error("checkpoint: dale_diagonal has wrong length");
        for (real d : cp.dale)
          if (d != 1 && d != -1) throw std::runtime_error("checkpoint: dale_diagonal entries must be +1 or -1");
      }
      m.layers.push_back(std::move(cp));
    }
    const std::size_t out_dim = m.output_dim();
    m.output = Parameter(unflat(params.at("output"), m.sizes.hidden, out_dim, "output"));
    m.output_bias = Parameter(unflat(params.at("output_bias"), 1, out_dim, "output_bias"));
    if (j.contains("vocab")) ck.vocab = j.at("vocab").get<std::vector<std::string>>();
    return ck;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: malformed document: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const StackedModel& model, const std::vector<std::string>& vocab) {
  write_file_atomic(path, checkpoint_to_json(model, vocab) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) { return checkpoint_from_json(read_file(path)); }

}  // namespace sva
