@problemName bad
@dimensions 1
@equalLength true
@classLabel true a
@data
1.0,oops,3.0:a
