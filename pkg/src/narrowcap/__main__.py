from narrowcap.cli import main

main()
