from gapdner.cli import main

main()
