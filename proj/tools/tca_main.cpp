#include <cstdio>

int main() {
  std::puts("tca cli placeholder");
  return 0;
}
