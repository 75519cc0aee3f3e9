#include <json.hpp>

#include "mmkd/errors.hpp"
#include "mmkd/losses.hpp"

namespace mmkd {

using nlohmann::json;

std::string config_to_json(const DistillConfig& cfg) {
  json doc;
  doc["alpha"] = cfg.alpha;
  doc["beta"] = cfg.beta;
  doc["gamma"] = cfg.gamma;
  doc["temperature"] = cfg.temperature;
  doc["lambda_kd"] = cfg.lambda_kd;
  doc["lambda_mr"] = cfg.lambda_mr;
  doc["relation_mode"] = to_string(cfg.relation_mode);
  doc["relation_source"] = to_string(cfg.relation_source);
  doc["normalize_rows"] = cfg.normalize_rows;
  doc["optimizer"] = to_string(cfg.optimizer);
  doc["learning_rate"] = cfg.learning_rate;
  doc["adam_beta1"] = cfg.adam_beta1;
  doc["adam_beta2"] = cfg.adam_beta2;
  doc["adam_epsilon"] = cfg.adam_epsilon;
  doc["epochs"] = cfg.epochs;
  doc["batch_size"] = cfg.batch_size;
  doc["seed"] = cfg.seed;
  doc["hidden_dim"] = cfg.hidden_dim;
  doc["teacher_depth"] = cfg.teacher_depth;
  doc["student_depth"] = cfg.student_depth;
  return doc.dump(2) + "\n";
}

namespace {

double read_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ParseError("config." + key + ": expected a number");
  return v.get<double>();
}

int read_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ParseError("config." + key + ": expected an integer");
  const auto x = v.get<long long>();
  if (x < -1'000'000'000LL || x > 1'000'000'000LL) throw ParseError("config." + key + ": out of range");
  return static_cast<int>(x);
}

std::string read_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ParseError("config." + key + ": expected a string");
  return v.get<std::string>();
}

}  // namespace

DistillConfig config_from_json(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: malformed document: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("config: expected an object");

  DistillConfig cfg;
  for (const auto& [key, v] : doc.items()) {
    try {
      if (key == "alpha") cfg.alpha = read_number(v, key);
      else if (key == "beta") cfg.beta = read_number(v, key);
      else if (key == "gamma") cfg.gamma = read_number(v, key);
      else if (key == "temperature") cfg.temperature = read_number(v, key);
      else if (key == "lambda_kd") cfg.lambda_kd = read_number(v, key);
      else if (key == "lambda_mr") cfg.lambda_mr = read_number(v, key);
      else if (key == "relation_mode") cfg.relation_mode = relation_mode_from_string(read_string(v, key));
      else if (key == "relation_source") cfg.relation_source = activation_source_from_string(read_string(v, key));
      else if (key == "normalize_rows") {
        if (!v.is_boolean()) throw ParseError("config.normalize_rows: expected true or false");
        cfg.normalize_rows = v.get<bool>();
      } else if (key == "optimizer") cfg.optimizer = optimizer_from_string(read_string(v, key));
      else if (key == "learning_rate") cfg.learning_rate = read_number(v, key);
      else if (key == "adam_beta1") cfg.adam_beta1 = read_number(v, key);
      else if (key == "adam_beta2") cfg.adam_beta2 = read_number(v, key);
      else if (key == "adam_epsilon") cfg.adam_epsilon = read_number(v, key);
      else if (key == "epochs") cfg.epochs = read_int(v, key);
      else if (key == "batch_size") cfg.batch_size = read_int(v, key);
      else if (key == "seed") {
        if (!v.is_number_unsigned()) throw ParseError("config.seed: expected a non-negative integer");
        cfg.seed = v.get<std::uint64_t>();
      } else if (key == "hidden_dim") cfg.hidden_dim = read_int(v, key);
      else if (key == "teacher_depth") cfg.teacher_depth = read_int(v, key);
      else if (key == "student_depth") cfg.student_depth = read_int(v, key);
      else throw ParseError("config: unknown field '" + key + "'");
    } catch (const ParameterError& e) {
      throw ParseError("config." + key + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const ParameterError& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  return cfg;
}

}  // namespace mmkd
