#include "dnnfm/cli.hpp"

int main(int argc, char** argv)
{
    return dnnfm::cli::run(argc, argv);
}
