#include "bilip/serialize.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace bilip {

using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

constexpr int kParamsVersion = 1;

// Row-major dump with exact 17-significant-digit decimals.
void append_array(std::string& out, const Matrix& m) {
  out += '[';
  bool first = true;
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j) {
      if (!first) out += ',';
      out += format_double(m(i, j));
      first = false;
    }
  out += ']';
}

Matrix matrix_from(const json& arr, long rows, long cols, const char* what) {
  if (long(arr.size()) != rows * cols)
    throw std::invalid_argument(std::string("params document: bad length for ") + what);
  Matrix m(rows, cols);
  long k = 0;
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j) m(i, j) = arr[size_t(k++)].get<double>();
  return m;
}

void append_solver(std::string& out, const SolverConfig& cfg) {
  out += "{\"kind\":\"";
  out += to_string(cfg.kind);
  out += "\",\"tol\":" + format_double(cfg.tol);
  out += ",\"max_iters\":" + std::to_string(cfg.max_iters);
  out += ",\"step\":{";
  switch (cfg.step.kind) {
    case StepPolicy::Kind::decreasing: out += "\"policy\":\"decreasing\""; break;
    case StepPolicy::Kind::inverse_smoothness: out += "\"policy\":\"inverse_smoothness\""; break;
    case StepPolicy::Kind::fixed: out += "\"policy\":\"fixed\""; break;
  }
  out += ",\"value\":" + format_double(cfg.step.value) + "}}";
}

SolverConfig solver_from(const json& j) {
  SolverConfig cfg;
  cfg.kind = solver_kind_from_string(j.at("kind").get<std::string>());
  cfg.tol = j.at("tol").get<double>();
  cfg.max_iters = j.at("max_iters").get<long>();
  const std::string policy = j.at("step").at("policy").get<std::string>();
  const double value = j.at("step").at("value").get<double>();
  if (policy == "decreasing")
    cfg.step = StepPolicy::decreasing(value);
  else if (policy == "inverse_smoothness")
    cfg.step = StepPolicy::inverse_smoothness(value);
  else
    cfg.step = StepPolicy::fixed(value);
  return cfg;
}

}  // namespace

std::string icnn_to_json(const IcnnParams& p) {
  std::string out = "{\"version\":" + std::to_string(kParamsVersion);
  out += ",\"activation\":\"";
  out += to_string(p.activation);
  out += "\",\"dims\":[" + std::to_string(p.input_dim);
  for (const IcnnLayer& l : p.layers) out += "," + std::to_string(l.out_dim());
  out += "],\"affine_head\":";
  out += p.affine_head ? "true" : "false";
  out += ",\"layers\":[";
  for (size_t i = 0; i < p.layers.size(); ++i) {
    if (i > 0) out += ',';
    out += '{';
    if (p.layers[i].has_gate()) {
      out += "\"w_gate\":";
      append_array(out, p.layers[i].w_gate);
      out += ',';
    }
    out += "\"w_input\":";
    append_array(out, p.layers[i].w_input);
    out += ",\"bias\":";
    append_array(out, Matrix(p.layers[i].bias));
    out += '}';
  }
  out += "]}";
  return out;
}

IcnnParams icnn_from_json(const std::string& text) {
  const json j = json::parse(text);
  if (j.at("version").get<int>() != kParamsVersion)
    throw std::invalid_argument("params document: unsupported version");
  IcnnParams p;
  p.activation = activation_from_string(j.at("activation").get<std::string>());
  const auto dims = j.at("dims").get<std::vector<long>>();
  require(dims.size() >= 2, "params document: dims too short");
  p.input_dim = int(dims[0]);
  p.affine_head = j.value("affine_head", true);
  const json& layers = j.at("layers");
  require(layers.size() + 1 == dims.size(), "params document: dims/layers mismatch");
  for (size_t i = 0; i < layers.size(); ++i) {
    IcnnLayer l;
    const long h = dims[i + 1];
    if (i > 0) l.w_gate = matrix_from(layers[i].at("w_gate"), h, dims[i], "w_gate");
    l.w_input = matrix_from(layers[i].at("w_input"), h, p.input_dim, "w_input");
    l.bias = matrix_from(layers[i].at("bias"), h, 1, "bias");
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

std::string blnn_to_json(const Blnn& model, const SolverConfig& solver_defaults) {
  std::string out = "{\"config\":{";
  if (model.config.weighted()) {
    out += "\"weighted\":{\"a\":";
    append_array(out, Matrix(model.config.a_weights));
    out += ",\"b\":";
    append_array(out, Matrix(model.config.b_weights));
    out += '}';
  } else {
    out += "\"alpha\":" + format_double(model.config.alpha);
    out += ",\"beta\":" + format_double(model.config.beta);
  }
  out += "},\"core\":" + icnn_to_json(model.core);
  out += ",\"solver_defaults\":";
  append_solver(out, solver_defaults);
  out += '}';
  return out;
}

BlnnBundle blnn_from_json(const std::string& text) {
  const json j = json::parse(text);
  BlnnBundle bundle;
  const json& cfg = j.at("config");
  if (cfg.contains("weighted")) {
    const auto a = cfg.at("weighted").at("a").get<std::vector<double>>();
    const auto b = cfg.at("weighted").at("b").get<std::vector<double>>();
    bundle.model.config.a_weights = Eigen::Map<const Vector>(a.data(), long(a.size()));
    bundle.model.config.b_weights = Eigen::Map<const Vector>(b.data(), long(b.size()));
  } else {
    bundle.model.config.alpha = cfg.at("alpha").get<double>();
    bundle.model.config.beta = cfg.at("beta").get<double>();
  }
  bundle.model.core = icnn_from_json(j.at("core").dump());
  bundle.solver_defaults = solver_from(j.at("solver_defaults"));
  bundle.model.config.validate(bundle.model.dim());
  return bundle;
}

std::string estimate_to_json(const BiLipEstimate& est) {
  std::string out = "{\"lip_hat\":" + format_double(est.lip_hat);
  out += ",\"invlip_hat\":" + format_double(est.invlip_hat);
  out += ",\"n_pairs\":" + std::to_string(est.n_pairs);
  out += ",\"seed\":" + std::to_string(est.seed);
  out += ",\"domain\":{\"lo\":";
  append_array(out, Matrix(est.domain_lo));
  out += ",\"hi\":";
  append_array(out, Matrix(est.domain_hi));
  out += "}}";
  return out;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << content;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void CsvWriter::header(const std::vector<std::string>& names) { row_mixed(names); }

void CsvWriter::row(const std::vector<double>& values) {
  for (size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out_ << ',';
    out_ << format_double(values[i]);
  }
  out_ << "\r\n";
}

void CsvWriter::row_mixed(const std::vector<std::string>& cells) {
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) out_ << ',';
    const std::string& c = cells[i];
    if (c.find_first_of(",\"\r\n") != std::string::npos) {
      out_ << '"';
      for (char ch : c) {
        if (ch == '"') out_ << '"';
        out_ << ch;
      }
      out_ << '"';
    } else {
      out_ << c;
    }
  }
  out_ << "\r\n";
}

}  // namespace bilip
