#include "tgpssm/param_store.hpp"

namespace tgpssm::ad {

int ParamStore::add(const std::string& name, const Matrix& value,
                    bool trainable) {
  check_arg(!index_.count(name), "param store: duplicate name '" + name + "'");
  int id = static_cast<int>(names_.size());
  names_.push_back(name);
  values_.push_back(value);
  trainable_.push_back(trainable);
  index_.emplace(name, id);
  return id;
}

int ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  check_arg(it != index_.end(), "param store: unknown name '" + name + "'");
  return it->second;
}

Matrix& ParamStore::operator[](const std::string& name) {
  return values_[index_of(name)];
}

const Matrix& ParamStore::operator[](const std::string& name) const {
  return values_[index_of(name)];
}

bool ParamStore::trainable(const std::string& name) const {
  return trainable_[index_of(name)];
}

void ParamStore::set_trainable(const std::string& name, bool t) {
  trainable_[index_of(name)] = t;
}

int ParamStore::trainable_scalar_count() const {
  int n = 0;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (trainable_[i]) n += static_cast<int>(values_[i].size());
  }
  return n;
}

}  // namespace tgpssm::ad
