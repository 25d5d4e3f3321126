#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <cstdlib>

#include <spdlog/spdlog.h>

int main(int argc, char** argv) {
  const char* level = std::getenv("MTSMAE_LOG");
  spdlog::set_level(level != nullptr ? spdlog::level::from_str(level) : spdlog::level::warn);
  doctest::Context context(argc, argv);
  return context.run();
}
