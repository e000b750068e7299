#include "rlvo/random.hpp"

#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "rlvo/binary_io.hpp"

namespace rlvo {

void Rng::save(std::ostream& os) const {
  std::ostringstream text;
  text << engine_;
  bin::write_string(os, text.str());
}

void Rng::load(std::istream& is) {
  std::istringstream text(bin::read_string(is));
  text >> engine_;
  if (!text) throw CheckpointError("corrupt random-engine state");
}

}  // namespace rlvo
