#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "frshield/error.hpp"

int main(int argc, char** argv) {
  frshield::set_warnings_enabled(false);
  doctest::Context context(argc, argv);
  return context.run();
}
