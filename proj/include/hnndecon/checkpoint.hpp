#pragma once

#include "hnndecon/mlp.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>

namespace hnndecon {

/// {"model": <family tag>, "arch": {...}, "tensors": {name: {"shape": [...], "data": [...]}}}
struct Checkpoint {
  std::string model;
  nlohmann::json arch = nlohmann::json::object();
  ParamStore tensors;
};

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", t.storage()}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

inline nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, t] : ckpt.tensors) tensors[name] = tensor_to_json(t);
  return {{"model", ckpt.model}, {"arch", ckpt.arch}, {"tensors", std::move(tensors)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ckpt;
  ckpt.model = j.at("model").get<std::string>();
  ckpt.arch = j.at("arch");
  for (const auto& [name, t] : j.at("tensors").items()) ckpt.tensors.emplace(name, tensor_from_json(t));
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << checkpoint_to_json(ckpt).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  return checkpoint_from_json(nlohmann::json::parse(in));
}

}  // namespace hnndecon
