#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "tgpssm/common.hpp"

namespace tgpssm::ad {

// Named parameter arrays with stable insertion order. The order defines
// leaf registration on a Tape and optimizer traversal, so runs are
// reproducible.
class ParamStore {
 public:
  int add(const std::string& name, const Matrix& value, bool trainable = true);

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Matrix& operator[](const std::string& name);
  const Matrix& operator[](const std::string& name) const;

  bool trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool t);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int i) const { return names_[i]; }
  Matrix& value(int i) { return values_[i]; }
  const Matrix& value(int i) const { return values_[i]; }
  bool trainable(int i) const { return trainable_[i]; }

  // Number of scalar entries across trainable parameters.
  int trainable_scalar_count() const;

 private:
  int index_of(const std::string& name) const;

  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::vector<bool> trainable_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace tgpssm::ad
